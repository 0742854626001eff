//! File formats: `.vol` noise volumes, `.tset` template sets, JSON curves,
//! weights, fixation logs, verdicts, and figure-of-merit tables.
//!
//! Binary formats are a single JSON header line followed by a little-endian
//! f32 voxel stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::detectability::DPrimeCurve;
use crate::error::{Error, Result};
use crate::fsm::{BatchVerdict, BinCalibration};
use crate::stimulus::{Modality, NoiseVolume, SignalKind};
use crate::templates::{EccentricityTemplateSet, ObserverModel};
use crate::weighting::{FixationLog, FixationTrial, WeightScheme, WeightVector};

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    mean: f64,
    sd: f64,
    exponent: f64,
    seed: u64,
}

fn write_f32_stream<W: Write>(mut out: W, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(1 << 16);
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
        if buf.len() >= (1 << 16) {
            out.write_all(&buf)?;
            buf.clear();
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f32_stream<R: Read>(mut input: R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_volume(path: &Path, volume: &NoiseVolume) -> Result<()> {
    let (w, h, d) = volume.dims();
    let header = VolumeHeader {
        dims: [w, h, d],
        mean: volume.mean,
        sd: volume.sd,
        exponent: volume.exponent,
        seed: volume.seed,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    write_f32_stream(&mut out, volume.voxels.iter().cloned())?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<NoiseVolume> {
    let mut input = BufReader::new(File::open(path)?);
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: VolumeHeader = serde_json::from_str(line.trim_end())?;
    let [w, h, d] = header.dims;
    let data = read_f32_stream(&mut input, w * h * d)?;
    let voxels = Array3::from_shape_vec((d, h, w), data)
        .map_err(|e| Error::Data(format!("voxel count mismatch: {e}")))?;
    Ok(NoiseVolume {
        voxels,
        mean: header.mean,
        sd: header.sd,
        exponent: header.exponent,
        seed: header.seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateSetHeader {
    model: ObserverModel,
    signal: SignalKind,
    modality: Modality,
    ecc_bins: Vec<f64>,
    internal_noise_k: f64,
    px_per_deg: f64,
    gabor_convention: String,
    template_shapes: Vec<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<BinCalibration>,
}

pub fn write_template_set(
    path: &Path,
    set: &EccentricityTemplateSet,
    calibration: Option<&BinCalibration>,
) -> Result<()> {
    let header = TemplateSetHeader {
        model: set.model,
        signal: set.signal_kind,
        modality: set.modality,
        ecc_bins: set.ecc_bins.clone(),
        internal_noise_k: set.internal_noise_k,
        px_per_deg: set.px_per_deg,
        gabor_convention: "even-cosine, circular envelope, 1-octave FWHM".into(),
        template_shapes: set
            .templates
            .iter()
            .map(|t| {
                let (d, h, w) = t.dim();
                [d, h, w]
            })
            .collect(),
        calibration: calibration.cloned(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &set.templates {
        write_f32_stream(&mut out, t.iter().cloned())?;
    }
    Ok(())
}

pub fn read_template_set(
    path: &Path,
) -> Result<(EccentricityTemplateSet, Option<BinCalibration>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: TemplateSetHeader = serde_json::from_str(line.trim_end())?;
    let mut templates = Vec::with_capacity(header.template_shapes.len());
    for [d, h, w] in &header.template_shapes {
        let data = read_f32_stream(&mut input, d * h * w)?;
        templates.push(
            Array3::from_shape_vec((*d, *h, *w), data)
                .map_err(|e| Error::Data(format!("template shape mismatch: {e}")))?,
        );
    }
    Ok((
        EccentricityTemplateSet {
            model: header.model,
            signal_kind: header.signal,
            modality: header.modality,
            ecc_bins: header.ecc_bins,
            templates,
            internal_noise_k: header.internal_noise_k,
            px_per_deg: header.px_per_deg,
        },
        header.calibration,
    ))
}

pub fn write_curve(path: &Path, curve: &DPrimeCurve) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, curve)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<DPrimeCurve> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_weights(path: &Path, weights: &WeightVector) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, weights)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<WeightVector> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Fixation logs are JSON Lines, one trial per line.
pub fn read_fixation_log(path: &Path) -> Result<FixationLog> {
    let input = BufReader::new(File::open(path)?);
    let mut trials = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trial: FixationTrial = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("fixation log line {}: {e}", i + 1)))?;
        trials.push(trial);
    }
    Ok(FixationLog { trials })
}

pub fn write_fixation_log(path: &Path, log: &FixationLog) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for trial in &log.trials {
        serde_json::to_writer(&mut out, trial)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_verdicts(path: &Path, verdicts: &[BatchVerdict]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in verdicts {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One aggregated figure-of-merit result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureOfMeritRecord {
    pub model: ObserverModel,
    pub signal: SignalKind,
    pub modality: Modality,
    pub scheme: WeightScheme,
    pub aggregate_dprime: f64,
    pub curve_ref: String,
    pub weights_ref: String,
    pub timestamp: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::invalid(format!("unknown table format '{other}'"))),
        }
    }
}

/// Round to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(5 - mag);
    (x * factor).round() / factor
}

fn scheme_str(s: WeightScheme) -> &'static str {
    match s {
        WeightScheme::Average => "avg",
        WeightScheme::DprimeWeighted => "dprime",
        WeightScheme::EtClosest => "et",
        WeightScheme::TimeClosest => "time",
    }
}

fn model_str(m: ObserverModel) -> &'static str {
    match m {
        ObserverModel::Fcho => "fcho",
        ObserverModel::Fnpwe => "fnpwe",
    }
}

fn signal_str(s: SignalKind) -> &'static str {
    match s {
        SignalKind::Mcalc => "mcalc",
        SignalKind::Mass => "mass",
    }
}

fn modality_str(m: Modality) -> &'static str {
    match m {
        Modality::TwoD => "2d",
        Modality::ThreeD => "3d",
    }
}

/// Write records as a CSV or JSON table with a stable column order.
pub fn export_table(path: &Path, records: &[FigureOfMeritRecord], format: TableFormat) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to export"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        TableFormat::Csv => {
            writeln!(
                out,
                "model,signal,modality,scheme,dprime,curve,weights,timestamp,config_hash"
            )?;
            for r in records {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    model_str(r.model),
                    signal_str(r.signal),
                    modality_str(r.modality),
                    scheme_str(r.scheme),
                    round_sig6(r.aggregate_dprime),
                    r.curve_ref,
                    r.weights_ref,
                    r.timestamp,
                    r.config_hash
                )?;
            }
        }
        TableFormat::Json => {
            serde_json::to_writer_pretty(&mut out, records)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn import_table_json(path: &Path) -> Result<Vec<FigureOfMeritRecord>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectability::DPrimeMethod;
    use crate::stimulus::generate_noise_volume;
    use crate::templates::{build_template_set, BackgroundStats};
    use crate::stimulus::make_signal;
    use ndarray::Array2;

    #[test]
    fn volume_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.vol");
        let v = generate_noise_volume((16, 12, 4), 128.0, 25.0, -2.8, 3).unwrap();
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.dims(), (16, 12, 4));
        assert_eq!(back.seed, 3);
        for (a, b) in v.voxels.iter().zip(back.voxels.iter()) {
            assert!((a - b).abs() < 1e-4); // f32 storage
        }
    }

    #[test]
    fn template_set_roundtrip_with_calibration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.tset");
        let signal = make_signal(SignalKind::Mass, 10.0).unwrap();
        let nps = Array2::from_elem((16, 16), 625.0);
        let set = build_template_set(
            ObserverModel::Fnpwe,
            &signal,
            &BackgroundStats::Nps2d(nps),
            &[0.0, 1.0],
            10.0,
            16,
            Modality::TwoD,
        )
        .unwrap();
        let calib = BinCalibration {
            mu_n: vec![1.0, 2.0],
            sigma_raw: vec![3.0, 4.0],
            sigma_lambda: vec![5.0, 6.0],
            dprime: vec![1.5, 0.5],
        };
        write_template_set(&path, &set, Some(&calib)).unwrap();
        let (back, cal) = read_template_set(&path).unwrap();
        assert_eq!(back.ecc_bins, set.ecc_bins);
        assert_eq!(back.templates.len(), 2);
        assert_eq!(cal.unwrap().mu_n, calib.mu_n);
    }

    #[test]
    fn curve_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.json");
        let curve = DPrimeCurve {
            model: ObserverModel::Fcho,
            signal: SignalKind::Mcalc,
            modality: Modality::ThreeD,
            ecc_bins: vec![0.0, 1.0],
            dprime: vec![3.0, 1.0],
            method: DPrimeMethod::Analytic,
            n_trials: None,
            seed: Some(7),
        };
        write_curve(&path, &curve).unwrap();
        let back = read_curve(&path).unwrap();
        assert_eq!(back.dprime, curve.dprime);
        assert_eq!(back.method, DPrimeMethod::Analytic);
    }

    #[test]
    fn fixation_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = FixationLog {
            trials: vec![FixationTrial {
                trial_id: "t1".into(),
                modality: Modality::TwoD,
                signal_present: true,
                signal_xyz: Some((10.0, 20.0, 0.0)),
                fixations: vec![(1.0, 2.0, 0.0, 250.0)],
            }],
        };
        write_fixation_log(&path, &log).unwrap();
        let back = read_fixation_log(&path).unwrap();
        assert_eq!(back.trials.len(), 1);
        assert_eq!(back.trials[0].signal_xyz, Some((10.0, 20.0, 0.0)));
    }

    fn record() -> FigureOfMeritRecord {
        FigureOfMeritRecord {
            model: ObserverModel::Fnpwe,
            signal: SignalKind::Mass,
            modality: Modality::TwoD,
            scheme: WeightScheme::Average,
            aggregate_dprime: 2.345678,
            curve_ref: "c.json".into(),
            weights_ref: "w.json".into(),
            timestamp: "2026-01-01T00:00:00Z".into(),
            config_hash: "abc123".into(),
        }
    }

    #[test]
    fn table_csv_has_header_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        export_table(&path, &[record()], TableFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("model,signal,modality,scheme,dprime"));
        assert!(lines[1].starts_with("fnpwe,mass,2d,avg,2.34568"));
    }

    #[test]
    fn table_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let recs = vec![record()];
        export_table(&path, &recs, TableFormat::Json).unwrap();
        let back = import_table_json(&path).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn empty_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_table(&dir.path().join("x.csv"), &[], TableFormat::Csv).is_err());
    }

    #[test]
    fn round_sig6_examples() {
        assert_eq!(round_sig6(1234567.0), 1234570.0);
        assert_eq!(round_sig6(0.001234567), 0.00123457);
        assert_eq!(round_sig6(0.0), 0.0);
    }
}
