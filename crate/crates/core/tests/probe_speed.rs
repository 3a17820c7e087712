use std::path::PathBuf;
use std::time::Instant;

use csmr_core::dataio::{load_split, DatasetKind, GrayscaleMode, SplitName};
use csmr_core::experiment::evaluate;
use csmr_core::model::{train_with_progress, TrainConfig};
use csmr_core::pipeline::{build_multirate, measure_split, preset_schedule, MeasurementScale};
use csmr_core::sensing::build_pc;

#[test]
#[ignore]
fn probe_epoch_speed() {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let t0 = Instant::now();
    let train_split = load_split(DatasetKind::Mnist, &data.join("mnist"), SplitName::Train, GrayscaleMode::Luma601).unwrap();
    let test_split = load_split(DatasetKind::Mnist, &data.join("mnist"), SplitName::Test, GrayscaleMode::Luma601).unwrap();
    println!("load: {:?}", t0.elapsed());

    let pc = build_pc(1024).unwrap();
    let t1 = Instant::now();
    let set = build_multirate(&train_split, &pc, &preset_schedule("10pt").unwrap(), 1234).unwrap();
    println!("measure+shuffle train: {:?} ({} examples)", t1.elapsed(), set.len());

    let t2 = Instant::now();
    let test_meas = measure_split(&test_split, &pc, MeasurementScale::DivideByN).unwrap();
    println!("measure test: {:?}", t2.elapsed());

    let config = TrainConfig { epochs: 20, seed: 7, ..TrainConfig::default() };
    let t3 = Instant::now();
    let (params, _) = train_with_progress(&set, 256, &config, |s| {
        println!("epoch {}: loss {:.4} acc {:.4} lr {:.2e} ({:?})", s.epoch, s.mean_loss, s.accuracy, s.lr, t3.elapsed());
    }).unwrap();

    let t4 = Instant::now();
    let acc256 = evaluate(&params, &test_meas, 256).unwrap();
    let acc10 = evaluate(&params, &test_meas, 10).unwrap();
    println!("eval: {:?}; test acc m=256 {:.4}, m=10 {:.4}", t4.elapsed(), acc256, acc10);
}
