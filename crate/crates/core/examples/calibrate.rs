//! Recalibrates the envelope constants; redirect stdout to crates/core/data/envelope_constants.json.

use pearson_stein::stein::*;
fn main() {
    let mut out = Vec::new();
    for (label, spec) in calibration_targets() {
        let bulk = spec.bulk_interval(BULK_EPS, BULK_EDGE);
        let grid = sweep_grid(spec.lo, spec.hi, bulk, 4000, 0.0);
        let t = std::time::Instant::now();
        let c = calibrate_constants(
            &spec,
            &[0, 1, 2, 3],
            &calibration_thresholds(spec.lo, spec.hi, bulk),
            &grid,
        )
        .unwrap();
        eprintln!("{label} {bulk:?} {c:?} {:?}", t.elapsed());
        out.push(FrozenEntry {
            label: label.into(),
            target: spec,
            constants: c,
        });
    }
    let f = FrozenConstants {
        grid_points: 4000,
        k_max: 3,
        targets: out,
    };
    println!("{}", serde_json::to_string_pretty(&f).unwrap());
}
