//! Configuration files, waveform CSV, trajectory logs, learning-curve tables
//! and run directories.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, MsrEnv, RobotConfig};
use crate::error::{Error, Result};
use crate::td3::{save_checkpoint, Checkpoint, Hyperparams};
use crate::trainer::{phase_env_config, LearningCurve, TrainConfig, TrainOutcome};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Everything a run depends on, as one TOML document with sections
/// `[env]`, `[robot]`, `[agent]` and `[train]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub robot: RobotConfig,
    pub agent: Hyperparams,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Parse { what: "config", detail: one_line(&e.to_string()) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "config", detail: e.to_string() })
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.agent.validate()?;
        self.robot.material.validate()?;
        self.robot.ground.validate()?;
        self.robot.damping.validate(self.env.element_count + 1)?;
        phase_env_config(&self.env, &self.train, true).validate()?;
        phase_env_config(&self.env, &self.train, false).validate()
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// State of the robot at one control-period boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    /// Field in millitesla.
    pub field_mt: [f64; 3],
    /// In-plane node positions, m.
    pub positions: Vec<[f64; 2]>,
    pub contact: Vec<f64>,
}

impl TrajectorySample {
    pub fn capture(env: &MsrEnv) -> Self {
        Self {
            t: env.steps() as f64 / env.config().action_rate_hz,
            field_mt: env.field().millitesla(),
            positions: env.rod().positions.iter().map(|p| [p.x, p.y]).collect(),
            contact: env.contact_indicators(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Sample spacing, s.
    pub period: f64,
    pub max_field_mt: f64,
    pub middle_node: usize,
    /// Hash of the experiment config that produced the policy, if known.
    #[serde(default)]
    pub config_hash: String,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse { what: "trajectory", detail: e.to_string() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { what: "trajectory", detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

pub const WAVEFORM_HEADER: &str = "t,bx,by,bz";
pub const WAVEFORM_RATE_HZ: f64 = 100.0;
/// Slack for values re-read from the 6-decimal text form, mT.
pub const WAVEFORM_TEXT_TOLERANCE: f64 = 1e-6;
/// Slack for in-memory values, mT.
pub const WAVEFORM_TOLERANCE: f64 = 1e-9;

/// Field rows at 10 ms spacing: `[t (s), bx, by, bz (mT)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformTable {
    pub rows: Vec<[f64; 4]>,
}

impl WaveformTable {
    /// The first `rows` samples of a rollout.
    pub fn from_trajectory(traj: &Trajectory, rows: usize) -> Result<Self> {
        if traj.samples.len() < rows {
            return Err(Error::Config(format!("trajectory has {} samples, {rows} rows requested", traj.samples.len())));
        }
        if ((traj.period * WAVEFORM_RATE_HZ) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("trajectory sampled every {} s, waveforms need 10 ms", traj.period)));
        }
        let rows = traj.samples[..rows]
            .iter()
            .enumerate()
            .map(|(k, s)| [k as f64 / WAVEFORM_RATE_HZ, s.field_mt[0], s.field_mt[1], s.field_mt[2]])
            .collect();
        Ok(Self { rows })
    }

    /// Checks every row against the hardware contract; the error names the
    /// first offending row.
    pub fn check(&self, max_field_mt: f64, max_step_mt: f64, tolerance: f64) -> Result<()> {
        let fail = |row: usize, reason: String| Err(Error::Waveform { row, reason });
        let Some(first) = self.rows.first() else {
            return fail(0, "table is empty".into());
        };
        if first[1..].iter().any(|v| v.abs() > 0.0) {
            return fail(0, format!("first row must be all zero, got {:?}", &first[1..]));
        }
        for (k, r) in self.rows.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return fail(k, "non-finite value".into());
            }
            let t = k as f64 / WAVEFORM_RATE_HZ;
            if (r[0] - t).abs() > tolerance.max(1e-12) {
                return fail(k, format!("time {} but expected {t:.6}", r[0]));
            }
            if r[3] != 0.0 {
                return fail(k, format!("bz = {} must be zero", r[3]));
            }
            let amp = r[1].hypot(r[2]);
            if amp > max_field_mt + tolerance {
                return fail(k, format!("amplitude {amp} exceeds {max_field_mt} mT"));
            }
            if k > 0 {
                let p = &self.rows[k - 1];
                for axis in 1..3 {
                    let step = (r[axis] - p[axis]).abs();
                    if step > max_step_mt + tolerance {
                        return fail(k, format!("axis {axis} moved {step} mT in one step"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(40 * (self.rows.len() + 1));
        out.push_str(WAVEFORM_HEADER);
        out.push('\n');
        for r in &self.rows {
            // avoid "-0.000000"
            let f = |v: f64| if v == 0.0 { 0.0 } else { v };
            writeln!(out, "{:.6},{:.6},{:.6},{:.6}", f(r[0]), f(r[1]), f(r[2]), f(r[3])).unwrap();
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |row: usize, detail: String| Error::Parse {
            what: "waveform",
            detail: format!("line {}: {detail}", row + 1),
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == WAVEFORM_HEADER => {}
            other => return Err(bad(0, format!("expected header {WAVEFORM_HEADER:?}, got {other:?}"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(i + 1, format!("expected 4 fields, got {}", fields.len())));
            }
            let mut row = [0.0; 4];
            for (slot, s) in row.iter_mut().zip(fields) {
                *slot = s.trim().parse().map_err(|e| bad(i + 1, format!("{s:?}: {e}")))?;
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }
}

/// Checks the table exactly, then writes it. Nothing is written on failure.
pub fn export_waveform(path: &Path, table: &WaveformTable, max_field_mt: f64, max_step_mt: f64) -> Result<()> {
    table.check(max_field_mt, max_step_mt, WAVEFORM_TOLERANCE)?;
    write_atomic(path, table.to_csv().as_bytes())
}

pub const CURVE_HEADER: &str = "step return ema_return";

pub fn format_curve(curve: &LearningCurve, config_hash: &str) -> String {
    let mut out = format!("# config_hash {config_hash}\n{CURVE_HEADER}\n");
    for p in &curve.points {
        writeln!(out, "{} {:.6} {:.6}", p.step, p.ret, p.ema).unwrap();
    }
    out
}

/// Reads `(step, return, ema_return)` rows, skipping comments.
pub fn parse_curve(text: &str) -> Result<Vec<(u64, f64, f64)>> {
    let bad = |detail: String| Error::Parse { what: "learning curve", detail };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(bad("missing header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("row {l:?}")));
            }
            Ok((
                f[0].parse().map_err(|_| bad(format!("step {:?}", f[0])))?,
                f[1].parse().map_err(|_| bad(format!("return {:?}", f[1])))?,
                f[2].parse().map_err(|_| bad(format!("ema {:?}", f[2])))?,
            ))
        })
        .collect()
}

/// Files of one training run.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub phase1: PathBuf,
    pub last: PathBuf,
    pub curve: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            config: dir.join("config.toml"),
            phase1: dir.join("phase1.ckpt"),
            last: dir.join("final.ckpt"),
            curve: dir.join("curve.txt"),
        }
    }
}

/// Persists a finished run: config snapshot, both checkpoints and the
/// learning-curve table, each stamped with the config hash.
pub fn write_run(dir: &Path, exp: &ExperimentConfig, outcome: &TrainOutcome) -> Result<RunFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = RunFiles::new(dir);
    let hash = exp.hash()?;
    let config = format!("# config_hash {hash}\n{}", exp.to_toml()?);
    write_atomic(&files.config, config.as_bytes())?;
    save_checkpoint(&files.phase1, &Checkpoint { config_hash: hash.clone(), nets: outcome.phase1.clone() })?;
    save_checkpoint(&files.last, &Checkpoint { config_hash: hash.clone(), nets: outcome.agent.nets.clone() })?;
    write_atomic(&files.curve, format_curve(&outcome.curve, &hash).as_bytes())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let err = ExperimentConfig::from_toml("[train]\nscaled_step = 5\n").unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[env]\nsubstep = 1e-4\n").is_err());
    }

    #[test]
    fn config_round_trip_and_hash() {
        let text = "[train]\nscaled_steps = 5000\nrefine_steps = 0\n\n[robot.magnetization]\nkind = \"pattern2\"\nmagnitude = 61300.0\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml().unwrap(), again.to_toml().unwrap());
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
        assert_ne!(cfg.hash().unwrap(), ExperimentConfig::default().hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert_eq!(ExperimentConfig::from_toml("[agent]\ndiscount = 1.5\n").unwrap_err().kind(), "config");
        assert!(ExperimentConfig::from_toml("[train]\nrefine_substep = 3e-3\n").is_err());
    }

    fn table(fields: &[(f64, f64)]) -> WaveformTable {
        WaveformTable { rows: fields.iter().enumerate().map(|(k, (x, y))| [k as f64 / 100.0, *x, *y, 0.0]).collect() }
    }

    #[test]
    fn waveform_contract() {
        let ok = table(&[(0.0, 0.0), (0.3, -0.3), (0.6, -0.2)]);
        assert!(ok.check(4.0, 0.3, WAVEFORM_TOLERANCE).is_ok());
        let first = table(&[(0.1, 0.0)]);
        assert!(matches!(first.check(4.0, 0.3, 0.0), Err(Error::Waveform { row: 0, .. })));
        let jump = table(&[(0.0, 0.0), (0.2, 0.0), (0.6, 0.0)]);
        assert!(matches!(jump.check(4.0, 0.3, WAVEFORM_TOLERANCE), Err(Error::Waveform { row: 2, .. })));
        let mut bz = ok.clone();
        bz.rows[1][3] = 0.1;
        assert!(matches!(bz.check(4.0, 0.3, 0.0), Err(Error::Waveform { row: 1, .. })));
        let big = table(&[(0.0, 0.0), (0.3, 0.0)]);
        assert!(matches!(big.check(0.2, 0.3, 0.0), Err(Error::Waveform { row: 1, .. })));
    }

    #[test]
    fn csv_format() {
        let t = table(&[(0.0, 0.0), (0.1234567, -0.0000001)]);
        assert_eq!(
            t.to_csv(),
            "t,bx,by,bz\n0.000000,0.000000,0.000000,0.000000\n0.010000,0.123457,-0.000000,0.000000\n"
        );
        let back = WaveformTable::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back.rows[1][1], 0.123457);
        assert!(WaveformTable::parse_csv("x,y\n").is_err());
        assert!(WaveformTable::parse_csv("t,bx,by,bz\n0,1,2\n").is_err());
    }

    #[test]
    fn refused_export_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let bad = table(&[(0.0, 0.0), (0.5, 0.0)]);
        assert!(export_waveform(&path, &bad, 4.0, 0.3).is_err());
        assert!(!path.exists());
        export_waveform(&path, &table(&[(0.0, 0.0), (0.3, 0.0)]), 4.0, 0.3).unwrap();
        assert!(path.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn csv_round_trip_keeps_contract(moves in proptest::collection::vec((-0.3f64..=0.3, -0.3f64..=0.3), 0..300)) {
            use crate::env::{clamp_field, ActionIncrement};
            use crate::magnetics::FieldState;
            let mut f = FieldState::zero(4e-3);
            let mut rows = vec![(0.0, 0.0)];
            for (dx, dy) in moves {
                f = clamp_field(&f, ActionIncrement { dbx: dx, dby: dy }, 0.3);
                let mt = f.millitesla();
                rows.push((mt[0], mt[1]));
            }
            let t = table(&rows);
            prop_assert!(t.check(4.0, 0.3, WAVEFORM_TOLERANCE).is_ok());
            let back = WaveformTable::parse_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(back.rows.len(), t.rows.len());
            prop_assert!(back.check(4.0, 0.3, WAVEFORM_TEXT_TOLERANCE).is_ok());
            prop_assert_eq!(back.to_csv(), t.to_csv());
        }
    }

    #[test]
    fn curve_table_round_trip() {
        let mut c = LearningCurve::default();
        c.record(500, 1.5, 0.9).unwrap();
        c.record(1000, -0.25, 0.9).unwrap();
        let text = format_curve(&c, "abc");
        assert!(text.starts_with("# config_hash abc\nstep return ema_return\n500 1.500000 1.500000\n"));
        let rows = parse_curve(&text).unwrap();
        assert_eq!(rows[1], (1000, -0.25, 1.325));
    }
}
