use ecgsr::model::{DcaeSrConfig, DcaeSrModel, Ratio};
use ecgsr::nn::AdamState;
use ecgsr::signal::{make_record, Superclass, WindowPair};

fn window(fs: f64, n: usize, seed: u64) -> ecgsr::signal::MultiLeadRecord {
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|l| (0..n).map(|i| (((l as u64 + 3) * (i as u64 + seed)) as f64 * 0.01).sin()).collect())
        .collect();
    make_record(&rows, fs, format!("w{seed}"), None).unwrap()
}

fn main() {
    for (num, den, label) in [(1u32, 8u32, "1/8"), (1, 4, "1/4")] {
        let config = DcaeSrConfig {
            width_multiplier: Ratio { num, den },
            seed: 1,
            ..Default::default()
        };
        let model = DcaeSrModel::build(config).unwrap();
        let pair = WindowPair::new(window(50.0, 250, 1), window(500.0, 2500, 2), Superclass::Mi, "b", 0).unwrap();
        let mut adam = AdamState::new(&model.parameters());
        // warmup
        model.train_step(&mut adam, &pair.lr, &pair.lr, &pair.hr, 0).unwrap();
        let start = std::time::Instant::now();
        let reps = 6;
        for s in 0..reps {
            model.train_step(&mut adam, &pair.lr, &pair.lr, &pair.hr, s + 1).unwrap();
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        println!("width {label}: {per:.3} s/step");
        let start = std::time::Instant::now();
        for _ in 0..reps { model.infer(&pair.lr).unwrap(); }
        println!("width {label}: {:.3} s/infer", start.elapsed().as_secs_f64() / reps as f64);
    }
}
