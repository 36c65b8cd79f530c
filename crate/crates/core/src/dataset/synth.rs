//! Seeded generator for files in the C-MAPSS layout.
//!
//! Engines follow a smooth exponential health decay toward failure. Fourteen
//! sensors drift with the decay under per-fault-mode sensitivities; the other
//! seven stay flat within each operating condition. Test engines are cut at a
//! random point and the remaining cycles go to the RUL file.

use std::fmt::Write as _;
use std::path::Path;

use super::{DatasetId, RAW_SENSORS};
use crate::error::Result;
use crate::numkit::SeededRng;

/// Nominal sensor levels at operating condition 0.
const BASE: [f64; RAW_SENSORS] = [
    518.67, 642.0, 1585.0, 1400.0, 14.62, 21.61, 554.0, 2388.0, 9050.0, 1.3, 47.3, 522.0, 2388.0, 8135.0, 8.41, 0.03,
    392.0, 2388.0, 100.0, 38.9, 23.35,
];
/// Total drift at failure, fault mode 0.
const DRIFT: [f64; RAW_SENSORS] = [
    0.0, 1.6, 35.0, 45.0, 0.0, 0.0, -3.5, 0.25, 30.0, 0.0, 1.1, -3.0, 0.25, 25.0, 0.12, 0.0, 5.0, 0.0, 0.0, -0.9, -0.55,
];
/// Measurement noise standard deviation.
const NOISE: [f64; RAW_SENSORS] = [
    0.0, 0.45, 5.5, 7.5, 0.0, 0.001, 0.8, 0.06, 12.0, 0.0, 0.22, 0.6, 0.06, 11.0, 0.035, 0.0, 1.4, 0.0, 0.0, 0.17, 0.1,
];
/// Operating settings for the six flight regimes.
const CONDITIONS: [[f64; 3]; 6] = [
    [0.0, 0.0, 100.0],
    [10.0, 0.25, 100.0],
    [20.0, 0.7, 100.0],
    [25.0, 0.62, 60.0],
    [35.0, 0.84, 100.0],
    [42.0, 0.84, 100.0],
];
/// Sensor-level multiplier per regime.
const REGIME_SCALE: [f64; 6] = [1.0, 0.93, 0.86, 0.74, 0.81, 0.78];
/// Seed used by the CLI and the test suites unless told otherwise.
pub const DEFAULT_SEED: u64 = 7;
/// Shortest test trajectory, matching the shortest engine in the public FD001 test file.
const MIN_TEST_LEN: usize = 31;

struct Engine {
    settings: Vec<[f64; 3]>,
    sensors: Vec<[f64; RAW_SENSORS]>,
}

fn lifetime(id: DatasetId, rng: &mut SeededRng) -> usize {
    let (lo, spread, hi) = match id {
        DatasetId::FD001 | DatasetId::FD003 => (128.0, 80.0, 362.0),
        DatasetId::FD002 | DatasetId::FD004 => (128.0, 95.0, 378.0),
    };
    let extra = -spread * (1.0 - rng.uniform()).ln();
    (lo + extra).min(hi).round() as usize
}

fn simulate(id: DatasetId, life: usize, rng: &mut SeededRng) -> Engine {
    let meta = id.meta();
    let mode = rng.below(meta.fault_modes);
    let wear = 0.03 + 0.12 * rng.uniform();
    let rate = 4.0 + 2.0 * rng.uniform();
    let offset: Vec<f64> = (0..RAW_SENSORS).map(|k| 0.3 * NOISE[k] * rng.normal()).collect();
    let mut settings = Vec::with_capacity(life);
    let mut sensors = Vec::with_capacity(life);
    for c in 1..=life {
        let regime = if meta.conditions == 1 {
            0
        } else {
            rng.below(meta.conditions)
        };
        let op = CONDITIONS[regime];
        let jitter = [0.002 * rng.normal(), 0.0003 * rng.normal(), 0.0];
        settings.push([op[0] + jitter[0], op[1] + jitter[1], op[2]]);

        let x = c as f64 / life as f64;
        let health = wear + ((rate * x).exp() - 1.0) / (rate.exp() - 1.0);
        let mut row = [0.0; RAW_SENSORS];
        for k in 0..RAW_SENSORS {
            let mut drift = DRIFT[k];
            if mode == 1 && matches!(k, 10 | 11 | 19 | 20) {
                drift *= -0.6;
            }
            let level = BASE[k] * REGIME_SCALE[regime];
            row[k] = level + offset[k] + drift * health + NOISE[k] * rng.normal();
        }
        sensors.push(row);
    }
    Engine { settings, sensors }
}

fn push_rows(out: &mut String, unit: usize, e: &Engine, len: usize) {
    for c in 0..len {
        let op = e.settings[c];
        write!(out, "{unit} {} {:.4} {:.4} {:.1}", c + 1, op[0], op[1], op[2]).unwrap();
        for v in &e.sensors[c] {
            write!(out, " {v:.4}").unwrap();
        }
        out.push('\n');
    }
}

/// Write `train_*.txt`, `test_*.txt` and `RUL_*.txt` for one subset.
pub fn write_dataset(dir: &Path, id: DatasetId, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = id.meta();
    let base = SeededRng::new(seed).fork(id as u64 + 1);

    let mut train = String::new();
    let mut rng = base.fork(1);
    for unit in 1..=meta.train_engines {
        let life = lifetime(id, &mut rng);
        let e = simulate(id, life, &mut rng);
        push_rows(&mut train, unit, &e, life);
    }

    let mut test = String::new();
    let mut rul = String::new();
    let mut rng = base.fork(2);
    for unit in 1..=meta.test_engines {
        let life = lifetime(id, &mut rng);
        let e = simulate(id, life, &mut rng);
        let lo = MIN_TEST_LEN.min(life - 1);
        let hi = ((0.95 * life as f64) as usize).max(lo);
        let cut = lo + rng.below(hi - lo + 1);
        push_rows(&mut test, unit, &e, cut);
        writeln!(rul, "{}", life - cut).unwrap();
    }

    std::fs::write(id.train_file(dir), train)?;
    std::fs::write(id.test_file(dir), test)?;
    std::fs::write(id.rul_file(dir), rul)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_rul, parse_trajectories, select_sensors, SensorSelection};

    #[test]
    fn counts_follow_the_subset_table() {
        let dir = tempfile::tempdir().unwrap();
        for id in [DatasetId::FD001, DatasetId::FD004] {
            write_dataset(dir.path(), id, 5).unwrap();
            let tr = parse_trajectories(&id.train_file(dir.path())).unwrap();
            let te = parse_trajectories(&id.test_file(dir.path())).unwrap();
            let rul = parse_rul(&id.rul_file(dir.path())).unwrap();
            assert_eq!(tr.len(), id.meta().train_engines);
            assert_eq!(te.len(), id.meta().test_engines);
            assert_eq!(rul.len(), te.len());
            assert!(rul.iter().all(|&r| r >= 1.0));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), DatasetId::FD003, 9).unwrap();
        write_dataset(b.path(), DatasetId::FD003, 9).unwrap();
        let id = DatasetId::FD003;
        assert_eq!(
            std::fs::read(id.train_file(a.path())).unwrap(),
            std::fs::read(id.train_file(b.path())).unwrap()
        );
    }

    #[test]
    fn dropped_sensors_are_flat_in_single_regime_subsets() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), DatasetId::FD001, 1).unwrap();
        let tr = parse_trajectories(&DatasetId::FD001.train_file(dir.path())).unwrap();
        let t = &tr[0];
        for k in [0, 4, 9, 15, 17, 18] {
            assert!(t.sensors.iter().all(|r| r[k] == t.sensors[0][k]), "sensor {}", k + 1);
        }
        let kept = select_sensors(t, &SensorSelection::default()).unwrap();
        let first: f64 = kept.sensors[..20].iter().map(|r| r[1]).sum::<f64>() / 20.0;
        let last: f64 = kept.sensors[t.len() - 20..].iter().map(|r| r[1]).sum::<f64>() / 20.0;
        assert!(last > first, "sensor 3 should rise toward failure");
    }
}
