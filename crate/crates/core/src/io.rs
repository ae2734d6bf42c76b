//! File formats: CSV tables with JSON sidecars.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dd::{CoherenceCurve, CoherencePoint, SequenceDescriptor};
use crate::depth::{DepthDataset, DepthPoint, DepthSidecar};
use crate::error::{Error, Result};
use crate::noise::NoiseSpectrum;
use crate::protocol::ShotRecord;
use crate::pulse::Waveform;
use crate::sensitivity::{MagnetometerRecord, NvResult};

/// Bundled energy-resolution comparison of published magnetometers.
pub const BUNDLED_MAGNETOMETERS: &str = include_str!("../data/magnetometers.csv");
/// Bundled per-NV protocol parameters and results.
pub const BUNDLED_NV_RESULTS: &str = include_str!("../data/nv_results.csv");

const WAVEFORM_KEY: &str = "# piece_duration_s=";

/// Sidecar path next to a CSV file (`x.csv` → `x.json`).
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn read_sidecar<T: DeserializeOwned>(csv: &Path) -> Result<T> {
    let p = sidecar_path(csv);
    if !p.exists() {
        return Err(Error::Config(format!("missing sidecar {}", p.display())));
    }
    read_json(&p)
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    let found: Vec<&str> = h.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Data(format!(
            "unexpected CSV header {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

fn parse_f64(field: Option<&str>, what: &str, line: usize) -> Result<f64> {
    let s = field.ok_or_else(|| Error::Data(format!("line {line}: missing {what}")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {what} from {s:?}")))
}

/// Float columns of a headed CSV.
fn read_columns(r: impl Read, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    check_header(&mut rdr, header)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = header
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(rec.get(j), name, i + 2))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Waveform CSV. Floats are written in shortest round-trip form, so
/// reading back is bit-exact.
pub fn write_waveform(w: &mut impl Write, wf: &Waveform) -> Result<()> {
    writeln!(w, "{WAVEFORM_KEY}{}", wf.piece_duration)?;
    writeln!(w, "piece_index,real_rabi_hz,imag_rabi_hz")?;
    for (i, (re, im)) in wf.real_hz.iter().zip(&wf.imag_hz).enumerate() {
        writeln!(w, "{i},{re},{im}")?;
    }
    Ok(())
}

pub fn read_waveform(r: impl Read) -> Result<Waveform> {
    let mut r = BufReader::new(r);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let dt = first
        .trim()
        .strip_prefix(WAVEFORM_KEY)
        .ok_or_else(|| {
            Error::Data(format!(
                "waveform CSV must start with `{WAVEFORM_KEY}<seconds>`"
            ))
        })?
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Data("cannot parse piece duration".into()))?;
    let rows = read_columns(r, &["piece_index", "real_rabi_hz", "imag_rabi_hz"])?;
    for (i, row) in rows.iter().enumerate() {
        if row[0] != i as f64 {
            return Err(Error::Data(format!(
                "piece_index {} out of order at row {i}",
                row[0]
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("waveform has no pieces".into()));
    }
    Ok(Waveform {
        real_hz: rows.iter().map(|r| r[1]).collect(),
        imag_hz: rows.iter().map(|r| r[2]).collect(),
        piece_duration: dt,
    })
}

pub fn save_waveform(path: &Path, wf: &Waveform) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_waveform(&mut w, wf)?;
    w.flush()?;
    Ok(())
}

pub fn load_waveform(path: &Path) -> Result<Waveform> {
    read_waveform(File::open(path)?)
}

pub fn write_coherence(w: &mut impl Write, curve: &CoherenceCurve) -> Result<()> {
    writeln!(w, "time_s,coherence,sigma")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.time_s, p.coherence, p.sigma)?;
    }
    Ok(())
}

pub fn read_coherence(r: impl Read, sequence: SequenceDescriptor) -> Result<CoherenceCurve> {
    let rows = read_columns(r, &["time_s", "coherence", "sigma"])?;
    if rows.is_empty() {
        return Err(Error::Data("coherence curve has no points".into()));
    }
    let points = rows
        .iter()
        .map(|r| CoherencePoint {
            time_s: r[0],
            coherence: r[1],
            sigma: r[2],
        })
        .collect();
    CoherenceCurve::new(sequence, points).map_err(|e| Error::Data(e.to_string()))
}

/// Writes `path` and its sidecar.
pub fn save_coherence(path: &Path, curve: &CoherenceCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_coherence(&mut w, curve)?;
    w.flush()?;
    write_json(&sidecar_path(path), &curve.sequence)
}

pub fn load_coherence(path: &Path) -> Result<CoherenceCurve> {
    let seq: SequenceDescriptor = read_sidecar(path)?;
    read_coherence(File::open(path)?, seq)
}

/// Every `*.csv` with a sidecar in `dir`, in file-name order.
pub fn load_coherence_dir(dir: &Path) -> Result<Vec<(PathBuf, CoherenceCurve)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no coherence CSV files in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| load_coherence(&p).map(|c| (p, c)))
        .collect()
}

pub fn write_spectrum(w: &mut impl Write, spec: &NoiseSpectrum) -> Result<()> {
    writeln!(w, "omega_rad_s,s_t2_per_hz")?;
    for (o, s) in spec.omega.iter().zip(&spec.s) {
        writeln!(w, "{o},{s}")?;
    }
    Ok(())
}

pub fn read_spectrum(r: impl Read) -> Result<NoiseSpectrum> {
    let rows = read_columns(r, &["omega_rad_s", "s_t2_per_hz"])?;
    NoiseSpectrum::new(
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
    )
    .map_err(|e| Error::Data(e.to_string()))
}

pub fn save_spectrum(path: &Path, spec: &NoiseSpectrum) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectrum(&mut w, spec)?;
    w.flush()?;
    Ok(())
}

pub fn load_spectrum(path: &Path) -> Result<NoiseSpectrum> {
    read_spectrum(File::open(path)?)
}

pub fn write_depth_points(w: &mut impl Write, points: &[DepthPoint]) -> Result<()> {
    writeln!(w, "tau_s,coherence,sigma")?;
    for p in points {
        writeln!(w, "{},{},{}", p.tau_s, p.coherence, p.sigma)?;
    }
    Ok(())
}

pub fn read_depth_points(r: impl Read) -> Result<Vec<DepthPoint>> {
    let rows = read_columns(r, &["tau_s", "coherence", "sigma"])?;
    if rows.is_empty() {
        return Err(Error::Data("depth dataset has no points".into()));
    }
    Ok(rows
        .iter()
        .map(|r| DepthPoint {
            tau_s: r[0],
            coherence: r[1],
            sigma: r[2],
        })
        .collect())
}

pub fn save_depth_dataset(path: &Path, data: &DepthDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_depth_points(&mut w, &data.points)?;
    w.flush()?;
    write_json(&sidecar_path(path), &data.sidecar)
}

pub fn load_depth_dataset(path: &Path) -> Result<DepthDataset> {
    let sidecar: DepthSidecar = read_sidecar(path)?;
    let points = read_depth_points(File::open(path)?)?;
    let d = DepthDataset { sidecar, points };
    d.validate()?;
    Ok(d)
}

pub fn read_magnetometer_table(r: impl Read) -> Result<Vec<MagnetometerRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    check_header(
        &mut rdr,
        &["kind", "l_eff_m", "eta_t_per_sqrt_hz", "ref", "e_r_hbar"],
    )?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<MagnetometerRecord>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Data("magnetometer table is empty".into()));
    }
    Ok(rows)
}

pub fn load_magnetometer_table(path: &Path) -> Result<Vec<MagnetometerRecord>> {
    read_magnetometer_table(File::open(path)?)
}

pub fn read_nv_results(r: impl Read) -> Result<Vec<NvResult>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<NvResult>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Data("NV results table is empty".into()));
    }
    Ok(rows)
}

pub fn write_shots(w: impl Write, shots: &[ShotRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in shots {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_shots(r: impl Read) -> Result<Vec<ShotRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Header row plus rows of floats.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::Family;

    #[test]
    fn waveform_round_trip_is_bit_exact() {
        let wf = Waveform {
            real_hz: vec![
                1.0 / 3.0,
                -2.5e6,
                0.0,
                f64::MIN_POSITIVE,
                9_999_999.999_999_9,
            ],
            imag_hz: vec![std::f64::consts::PI * 1e6, 1e-300, -0.0, 7.0, 1.0 / 7.0],
            piece_duration: 25e-9,
        };
        let mut buf = Vec::new();
        write_waveform(&mut buf, &wf).unwrap();
        let back = read_waveform(buf.as_slice()).unwrap();
        for (a, b) in wf.real_hz.iter().zip(&back.real_hz) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in wf.imag_hz.iter().zip(&back.imag_hz) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(wf.piece_duration.to_bits(), back.piece_duration.to_bits());
    }

    #[test]
    fn waveform_needs_duration_comment() {
        let text = "piece_index,real_rabi_hz,imag_rabi_hz\n0,1,2\n";
        assert!(matches!(
            read_waveform(text.as_bytes()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn coherence_round_trip() {
        let desc = SequenceDescriptor {
            family: Family::Xy8,
            n_pulses: 32,
        };
        let curve = CoherenceCurve::new(
            desc,
            vec![
                CoherencePoint {
                    time_s: 1e-4,
                    coherence: 0.9,
                    sigma: 0.01,
                },
                CoherencePoint {
                    time_s: 2e-4,
                    coherence: 0.7,
                    sigma: 0.01,
                },
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        save_coherence(&p, &curve).unwrap();
        assert_eq!(load_coherence(&p).unwrap(), curve);
        fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(matches!(load_coherence(&p), Err(Error::Config(_))));
    }

    #[test]
    fn bundled_tables_parse() {
        assert_eq!(
            read_magnetometer_table(BUNDLED_MAGNETOMETERS.as_bytes())
                .unwrap()
                .len(),
            24
        );
        let nv = read_nv_results(BUNDLED_NV_RESULTS.as_bytes()).unwrap();
        assert_eq!(nv.len(), 6);
        assert_eq!(nv[2].readout_cycles, 2025);
    }

    #[test]
    fn bad_header_is_data_error() {
        let text = "t,c,s\n1,0.5,0.1\n";
        let desc = SequenceDescriptor {
            family: Family::Cpmg,
            n_pulses: 2,
        };
        assert!(matches!(
            read_coherence(text.as_bytes(), desc),
            Err(Error::Data(_))
        ));
        assert!(read_depth_points("tau_s,coherence,sigma\n".as_bytes()).is_err());
    }
}
