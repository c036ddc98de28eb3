//! Command-line plumbing: a JSON run configuration, dataset generation,
//! the two training stages, baseline fitting, evaluation, and a gradient
//! check — all deterministic given the config seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::iqsig::{align, circular_shift, generate_frame, read_iq, write_iq, IqSignal, WaveformConfig};
use crate::losses::{combined, LossWeights};
use crate::mpdpd::{mp_fit_postinverse, MpCoeffs};
use crate::spectra::{bin_freq_hz, stft, BandPlan, StftParams};
use crate::tinynet::{
    grad_check, load_params_checked, save_params, ConvNetParams, GradCheckReport, Tensor3,
};
use crate::trainer::{
    evaluate, pan_fidelity, small_signal_gain, train_pan_resumed, train_pdn_resumed, Dpd,
    DpdKind, EvalReport, LinTarget, PanExample, PanFidelity, TrainConfig, TrainResult, WINDOW_LEN,
};
use crate::vpa::{pa_response, FreqClass, PaCondition, VoltageClass};
use crate::{DpdError, Result};

/// One JSON document describing a full reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub waveform: WaveformConfig,
    pub train: TrainConfig,
    pub band_plan: BandPlan,
    /// PA conditions; position defines the one-hot condition index.
    pub conditions: Vec<PaCondition>,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        self.train.validate()?;
        self.band_plan.validate(self.waveform.sample_rate_hz())?;
        if self.conditions.is_empty() {
            return Err(DpdError::Config("at least one PA condition is required".into()));
        }
        if self.train_seeds.is_empty() || self.test_seeds.is_empty() {
            return Err(DpdError::Config("train_seeds and test_seeds must be non-empty".into()));
        }
        if self.train_seeds.iter().any(|s| self.test_seeds.contains(s)) {
            return Err(DpdError::Config("train and test seeds must be disjoint".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// SHA-256 of the canonical JSON serialization, hex-encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Worker-count cap from DPDLAB_THREADS. All built-in paths are
/// deterministic single-worker; the cap exists so future parallel paths
/// never oversubscribe.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("DPDLAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| DpdError::Config(format!("DPDLAB_THREADS must be a positive integer, got {v:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    pub conditions: Vec<PaCondition>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset_seeds: Vec<u64>,
    pub epoch: usize,
    pub loss_weights: LossWeights,
    pub diverged: bool,
}

fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

fn x_file(split: &str, seed: u64) -> String {
    format!("x_{split}_{seed}.iqf")
}

fn y_file(split: &str, seed: u64, cond_idx: usize) -> String {
    format!("y_{split}_{seed}_c{cond_idx}.iqf")
}

/// Generate input frames for every seed and virtual-PA outputs for every
/// (seed, condition) pair; write IQF1 files and a hashed manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DataManifest> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (split, seeds) in [("train", &cfg.train_seeds), ("test", &cfg.test_seeds)] {
        for &seed in seeds {
            let x = generate_frame(&cfg.waveform, seed)?;
            let xp = dir.join(x_file(split, seed));
            write_iq(&x, &xp)?;
            files.push(FileEntry { path: x_file(split, seed), sha256: sha256_file(&xp)? });
            for (ci, cond) in cfg.conditions.iter().enumerate() {
                let y = pa_response(cond, &x)?;
                let yp = dir.join(y_file(split, seed, ci));
                write_iq(&y, &yp)?;
                files.push(FileEntry { path: y_file(split, seed, ci), sha256: sha256_file(&yp)? });
            }
        }
    }
    let manifest = DataManifest {
        tool_version: tool_version(),
        config_hash: config_hash(cfg),
        train_seeds: cfg.train_seeds.clone(),
        test_seeds: cfg.test_seeds.clone(),
        conditions: cfg.conditions.clone(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

fn read_frame(cfg: &RunConfig, name: &str) -> Result<IqSignal> {
    let path = cfg.data_dir().join(name);
    if !path.exists() {
        return Err(DpdError::Config(format!(
            "missing dataset file {} — run gen-data first",
            path.display()
        )));
    }
    read_iq(&path)
}

fn load_pan_examples(cfg: &RunConfig) -> Result<Vec<PanExample>> {
    let mut examples = Vec::new();
    for &seed in &cfg.train_seeds {
        let x = read_frame(cfg, &x_file("train", seed))?;
        for ci in 0..cfg.conditions.len() {
            let y = read_frame(cfg, &y_file("train", seed, ci))?;
            // Delay-align the target to the input before windowing.
            let a = align(&x, &y)?;
            let y = circular_shift(&y, -a.delay_samples);
            examples.push(PanExample { cond_idx: ci, input: x.clone(), target: y });
        }
    }
    Ok(examples)
}

fn checkpoint_names(stage: &str, tmse_only: bool) -> (String, String, String) {
    let tag = if tmse_only { format!("{stage}_tmse") } else { stage.to_string() };
    (format!("{tag}.dpn"), format!("{tag}_manifest.json"), format!("{tag}_log.jsonl"))
}

fn effective_weights(cfg: &RunConfig, tmse_only: bool) -> TrainConfig {
    let mut t = cfg.train.clone();
    if tmse_only {
        t.loss_weights = LossWeights::tmse_only();
    }
    t
}

fn write_stage_outputs(
    cfg: &RunConfig,
    stage_dir: &Path,
    names: &(String, String, String),
    train_cfg: &TrainConfig,
    result: &TrainResult,
) -> Result<()> {
    fs::create_dir_all(stage_dir)?;
    save_params(&result.params, &stage_dir.join(&names.0))?;
    let epoch = result.history.last().map(|h| h.epoch + 1).unwrap_or(0);
    let manifest = CheckpointManifest {
        tool_version: tool_version(),
        config_hash: config_hash(cfg),
        dataset_seeds: cfg.train_seeds.clone(),
        epoch,
        loss_weights: train_cfg.loss_weights,
        diverged: result.diverged,
    };
    write_json(&stage_dir.join(&names.1), &manifest)?;
    let mut log = fs::File::create(stage_dir.join(&names.2))?;
    for entry in &result.history {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(())
}

fn load_resume(
    stage_dir: &Path,
    names: &(String, String, String),
    in_channels: usize,
) -> Result<(ConvNetParams<f32>, usize)> {
    let params = load_params_checked(&stage_dir.join(&names.0), in_channels)?;
    let text = fs::read_to_string(stage_dir.join(&names.1))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    Ok((params, manifest.epoch))
}

/// Stage 1: train the conditional PAN and emit checkpoint, JSON-lines log,
/// and per-condition PAN-vs-oracle fidelity reports on held-out frames.
pub fn cmd_train_pan(cfg: &RunConfig, tmse_only: bool, resume: bool) -> Result<Vec<PanFidelity>> {
    cfg.validate()?;
    let examples = load_pan_examples(cfg)?;
    let c = cfg.conditions.len();
    let stage_dir = cfg.out_dir.join("pan");
    let names = checkpoint_names("pan", tmse_only);
    let train_cfg = effective_weights(cfg, tmse_only);
    let init = if resume { Some(load_resume(&stage_dir, &names, 2 + c)?) } else { None };
    let result = train_pan_resumed(
        &examples,
        c,
        &train_cfg,
        &StftParams::training_default(),
        &cfg.band_plan,
        init,
    )?;
    write_stage_outputs(cfg, &stage_dir, &names, &train_cfg, &result)?;
    if result.diverged {
        return Err(DpdError::Divergence("PAN training hit a non-finite loss".into()));
    }
    let frames = test_frames(cfg)?;
    let mut reports = Vec::new();
    for (ci, cond) in cfg.conditions.iter().enumerate() {
        reports.push(pan_fidelity(
            &result.params,
            c,
            ci,
            cond,
            &frames,
            &StftParams::eval_default(),
            &cfg.band_plan,
        )?);
    }
    let suffix = if tmse_only { "_tmse" } else { "" };
    write_json(&stage_dir.join(format!("fidelity{suffix}.json")), &reports)?;
    Ok(reports)
}

fn test_frames(cfg: &RunConfig) -> Result<Vec<IqSignal>> {
    cfg.test_seeds.iter().map(|&s| read_frame(cfg, &x_file("test", s))).collect()
}

fn train_frames(cfg: &RunConfig) -> Result<Vec<IqSignal>> {
    cfg.train_seeds.iter().map(|&s| read_frame(cfg, &x_file("train", s))).collect()
}

/// Stage 2: train the PDN through the frozen PAN checkpoint.
pub fn cmd_train_pdn(
    cfg: &RunConfig,
    tmse_only: bool,
    resume: bool,
    pan_path: Option<&Path>,
) -> Result<PathBuf> {
    cfg.validate()?;
    let c = cfg.conditions.len();
    let default_pan = cfg.out_dir.join("pan").join("pan.dpn");
    let pan = load_params_checked(pan_path.unwrap_or(&default_pan), 2 + c)?;
    let frames = train_frames(cfg)?;
    let stage_dir = cfg.out_dir.join("pdn");
    let names = checkpoint_names("pdn", tmse_only);
    let train_cfg = effective_weights(cfg, tmse_only);
    let init = if resume { Some(load_resume(&stage_dir, &names, 6)?) } else { None };
    let result = train_pdn_resumed(
        &pan,
        &frames,
        c,
        &train_cfg,
        &StftParams::training_default(),
        &cfg.band_plan,
        init,
    )?;
    write_stage_outputs(cfg, &stage_dir, &names, &train_cfg, &result)?;
    if result.diverged {
        return Err(DpdError::Divergence("PDN training hit a non-finite loss".into()));
    }
    Ok(stage_dir.join(&names.0))
}

/// Parse strings like "v4.0" / "v4_6".
pub fn parse_voltage(s: &str) -> Result<VoltageClass> {
    match s.to_ascii_lowercase().replace('_', ".").as_str() {
        "v4.0" => Ok(VoltageClass::V4_0),
        "v4.2" => Ok(VoltageClass::V4_2),
        "v4.6" => Ok(VoltageClass::V4_6),
        other => Err(DpdError::Config(format!("unknown voltage class {other:?}"))),
    }
}

pub fn parse_freq(s: &str) -> Result<FreqClass> {
    match s.to_ascii_lowercase().as_str() {
        "f2593" | "2593" => Ok(FreqClass::F2593),
        "f2643" | "2643" => Ok(FreqClass::F2643),
        other => Err(DpdError::Config(format!("unknown frequency class {other:?}"))),
    }
}

/// Fit the memory-polynomial baseline against the virtual PA for one
/// condition on the training frames.
pub fn cmd_fit_mp(cfg: &RunConfig, cond: &PaCondition) -> Result<MpCoeffs> {
    cfg.validate()?;
    let rate = cfg.waveform.sample_rate_hz();
    let mut pa_in = Vec::new();
    let mut pa_out = Vec::new();
    for frame in train_frames(cfg)? {
        pa_in.extend(frame.samples.iter().copied());
        pa_out.extend(pa_response(cond, &frame)?.samples);
    }
    let pa_in = IqSignal::new(pa_in, rate)?;
    let pa_out = IqSignal::new(pa_out, rate)?;
    let mut apply = |s: &IqSignal| pa_response(cond, s);
    let g0 = small_signal_gain(&mut apply, &pa_in)?;
    let normalized = pa_out.scaled(Complex64::new(1.0, 0.0) / g0);
    let coeffs = mp_fit_postinverse(&pa_in, &normalized, 3, 5)?;
    let dir = cfg.out_dir.join("mp");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join(format!("mp_{:?}.json", cond.voltage_class).to_lowercase()), &coeffs)?;
    Ok(coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Pan,
    Vpa,
}

/// Evaluate a DPD/target combination on the held-out frames: writes an
/// EvalReport (JSON + CSV row) and a PSD dump for plotting.
pub fn cmd_eval(
    cfg: &RunConfig,
    dpd_kind: DpdKind,
    target_kind: TargetKind,
    cond: &PaCondition,
    tag: &str,
) -> Result<EvalReport> {
    cfg.validate()?;
    let c = cfg.conditions.len();
    let frames = test_frames(cfg)?;
    let eval_stft = StftParams::eval_default();

    let pan_params = match target_kind {
        TargetKind::Pan => {
            Some(load_params_checked(&cfg.out_dir.join("pan").join("pan.dpn"), 2 + c)?)
        }
        TargetKind::Vpa => None,
    };
    let cond_idx = cfg
        .conditions
        .iter()
        .position(|k| k == cond)
        .ok_or_else(|| DpdError::Config("condition not in config (PAN target needs a trained condition)".into()));
    let target = match (&pan_params, target_kind) {
        (Some(p), TargetKind::Pan) => {
            LinTarget::Pan { params: p, num_conditions: c, cond_idx: cond_idx? }
        }
        _ => LinTarget::Vpa,
    };

    let pdn_params = match dpd_kind {
        DpdKind::Pdn => {
            Some(load_params_checked(&cfg.out_dir.join("pdn").join("pdn.dpn"), 6)?)
        }
        _ => None,
    };
    let mp_coeffs = match dpd_kind {
        DpdKind::Mp => {
            let path = cfg
                .out_dir
                .join("mp")
                .join(format!("mp_{:?}.json", cond.voltage_class).to_lowercase());
            if !path.exists() {
                return Err(DpdError::Config(format!(
                    "missing MP checkpoint {} — run fit-mp first",
                    path.display()
                )));
            }
            Some(serde_json::from_str::<MpCoeffs>(&fs::read_to_string(path)?)?)
        }
        _ => None,
    };
    let dpd = match dpd_kind {
        DpdKind::None => Dpd::None,
        DpdKind::Pdn => Dpd::Pdn(pdn_params.as_ref().unwrap()),
        DpdKind::Mp => Dpd::Mp(mp_coeffs.as_ref().unwrap()),
    };

    let report = evaluate(&dpd, &target, cond, &frames, &eval_stft, &cfg.band_plan)?;

    let dir = cfg.out_dir.join("eval");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join(format!("report_{tag}.json")), &report)?;
    let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
    fs::write(dir.join(format!("metrics_{tag}.csv")), csv)?;
    write_psd_dump(&dpd, &target, cond, &frames, &eval_stft, &dir.join(format!("spectrum_{tag}.csv")))?;
    Ok(report)
}

/// PSD dump: freq_hz ascending over (-fs/2, +fs/2) with per-signal power in
/// dB (input, no-DPD output, DPD output, ideal linear reference).
fn write_psd_dump(
    dpd: &Dpd<'_>,
    target: &LinTarget<'_>,
    cond: &PaCondition,
    frames: &[IqSignal],
    p: &StftParams,
    path: &Path,
) -> Result<()> {
    use crate::mpdpd::mp_apply;
    use crate::trainer::pdn_infer;
    let rate = frames[0].sample_rate_hz;
    let mut apply_target = |s: &IqSignal| target.apply_for_psd(cond, s);
    let g0 = small_signal_gain(&mut apply_target, &frames[0])?;
    let mut x_cat = Vec::new();
    let mut no_cat = Vec::new();
    let mut with_cat = Vec::new();
    for frame in frames {
        let u = match dpd {
            Dpd::None => frame.clone(),
            Dpd::Mp(c) => mp_apply(c, frame)?,
            Dpd::Pdn(params) => {
                let mut fb = |uw: &[Complex64]| -> Result<Vec<Complex64>> {
                    let w = IqSignal::new(uw.to_vec(), rate)?;
                    Ok(target.apply_for_psd(cond, &w)?.samples)
                };
                pdn_infer(params, frame, Some(&mut fb))?
            }
        };
        x_cat.extend(frame.samples.iter().copied());
        no_cat.extend(target.apply_for_psd(cond, frame)?.samples);
        with_cat.extend(target.apply_for_psd(cond, &u)?.samples);
    }
    let x = IqSignal::new(x_cat, rate)?;
    let reference = x.scaled(g0);
    let no_dpd = IqSignal::new(no_cat, rate)?;
    let with_dpd = IqSignal::new(with_cat, rate)?;

    let psd = |s: &IqSignal| -> Result<Vec<f64>> {
        Ok(stft(s, p)?
            .power_per_bin()
            .iter()
            .map(|&v| 10.0 * v.max(1e-30).log10())
            .collect())
    };
    let (px, pn, pw, pr) = (psd(&x)?, psd(&no_dpd)?, psd(&with_dpd)?, psd(&reference)?);
    let len = p.window_len;
    let bin_hz = rate / len as f64;
    let mut out = String::from("freq_hz,input_db,no_dpd_db,dpd_db,reference_db\n");
    // FFT-shift order so frequency ascends across (-fs/2, +fs/2).
    for m in (len / 2..len).chain(0..len / 2) {
        let f = bin_freq_hz(m, len, bin_hz);
        out.push_str(&format!("{:.3},{:.6},{:.6},{:.6},{:.6}\n", f, px[m], pn[m], pw[m], pr[m]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Finite-difference gradient check of the full network with the combined
/// loss, in 64-bit arithmetic.
pub fn cmd_grad_check(seed: u64) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let params = ConvNetParams::<f64>::paper_arch(5, seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let batch = 2;
    let mut input = Tensor3::<f64>::zeros(batch, 5, WINDOW_LEN);
    for v in input.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    // Fixed synthetic target so all three loss terms are active.
    let mut target = Tensor3::<f64>::zeros(batch, 2, WINDOW_LEN);
    for v in target.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let p = StftParams::training_default();
    let bp = BandPlan::default_eutra();
    let rate = WaveformConfig::default_preset().sample_rate_hz();
    let weights = LossWeights::all_three();
    let mut loss_fn = |out: &Tensor3<f64>| {
        let (lv, g) = combined(&target, out, &weights, &p, &bp, rate).expect("loss");
        (lv.total, g)
    };
    grad_check(&params, &input, &mut loss_fn, 1e-5, seed.wrapping_add(41))
}

impl LinTarget<'_> {
    /// Same dispatch as the private `apply`, re-exposed for the PSD dump.
    fn apply_for_psd(&self, cond: &PaCondition, sig: &IqSignal) -> Result<IqSignal> {
        match self {
            LinTarget::Pan { params, num_conditions, cond_idx } => {
                let mut hot = vec![0.0f32; *num_conditions];
                hot[*cond_idx] = 1.0;
                crate::trainer::apply_net_streaming(params, &hot, sig)
            }
            LinTarget::Vpa => pa_response(cond, sig),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vpa::PaCondition;
    use tempfile::TempDir;

    pub(crate) fn tiny_config(dir: &Path) -> RunConfig {
        let mut waveform = WaveformConfig::default_preset();
        waveform.fft_size = 1280;
        waveform.occupied_subcarriers = 340;
        waveform.num_ofdm_symbols = 1;
        RunConfig {
            waveform,
            train: TrainConfig {
                epochs: 2,
                batch_pan: 8,
                batch_pdn: 8,
                seed: 3,
                ..TrainConfig::default()
            },
            band_plan: BandPlan {
                inband_lo_hz: -5.1e6,
                inband_hi_hz: 5.1e6,
                adj_offset_hz: 10.4e6,
                adj_bw_hz: 10.2e6,
            },
            conditions: vec![
                PaCondition::nominal(VoltageClass::V4_0),
                PaCondition::nominal(VoltageClass::V4_6),
            ],
            train_seeds: vec![1, 2],
            test_seeds: vec![100],
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trip_and_hash_stability() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path());
        let js = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config_hash(&cfg), config_hash(&back));
        assert_eq!(config_hash(&cfg).len(), 64);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path());
        let mut v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn overlapping_seeds_rejected() {
        let tmp = TempDir::new().unwrap();
        let mut cfg = tiny_config(tmp.path());
        cfg.test_seeds = vec![2, 100];
        assert!(matches!(cfg.validate(), Err(DpdError::Config(_))));
    }

    #[test]
    fn gen_data_structure_and_determinism() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path());
        let m1 = cmd_gen_data(&cfg).unwrap();
        // 3 seeds x (1 input + 2 condition outputs).
        assert_eq!(m1.files.len(), 3 * 3);
        let m2 = cmd_gen_data(&cfg).unwrap();
        for (a, b) in m1.files.iter().zip(&m2.files) {
            assert_eq!(a.path, b.path);
            assert_eq!(a.sha256, b.sha256, "hash changed on rerun for {}", a.path);
        }
    }

    #[test]
    fn train_pan_missing_dataset_is_config_error() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path());
        let err = cmd_train_pan(&cfg, false, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn voltage_and_freq_parsing() {
        assert_eq!(parse_voltage("v4.0").unwrap(), VoltageClass::V4_0);
        assert_eq!(parse_voltage("V4_6").unwrap(), VoltageClass::V4_6);
        assert!(parse_voltage("v9.9").is_err());
        assert_eq!(parse_freq("f2643").unwrap(), FreqClass::F2643);
        assert!(parse_freq("f1").is_err());
    }

    #[test]
    fn thread_cap_parses_env() {
        // No env var set in tests by default.
        assert!(thread_cap().unwrap() >= 1);
    }
}
