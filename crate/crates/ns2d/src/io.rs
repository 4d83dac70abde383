//! File formats: the binary field snapshot, CSV emission for trajectories,
//! ledgers, coupling blocks and weight sweeps, and hashed output manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::coupling::CouplingBlockOutcome;
use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;

const SNAPSHOT_MAGIC: &[u8; 7] = b"NS2DFLD";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes a field snapshot: header {magic "NS2DFLD", version u32, M u32,
/// L f64}, then interleaved (re, im) f64 coefficients, row-major over the
/// k-lattice, component 1 then component 2. All little-endian.
pub fn write_field_snapshot(path: &Path, field: &SpectralField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(field.grid().resolution() as u32).to_le_bytes())?;
    w.write_all(&field.grid().half_width().to_le_bytes())?;
    for comp in 0..2 {
        for c in field.component(comp) {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_snapshot(path: &Path) -> Result<SpectralField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::InvalidConfig(format!("{}: not a field snapshot", path.display())));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SNAPSHOT_VERSION {
        return Err(Error::InvalidConfig(format!("unsupported snapshot version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let m = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let l = f64::from_le_bytes(f64buf);
    let grid = Grid::new(l, m)?;
    let mut coeffs = [vec![Complex64::ZERO; m * m], vec![Complex64::ZERO; m * m]];
    for comp in coeffs.iter_mut() {
        for c in comp.iter_mut() {
            r.read_exact(&mut f64buf)?;
            let re = f64::from_le_bytes(f64buf);
            r.read_exact(&mut f64buf)?;
            let im = f64::from_le_bytes(f64buf);
            *c = Complex64::new(re, im);
        }
    }
    Ok(SpectralField::from_coeffs(&grid, coeffs))
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Trajectory CSV: `(t, L2, H1, enstrophy, psiL2, psiGrad, psiVortL2, psiVortGrad)`.
pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,L2,H1,enstrophy,psiL2,psiGrad,psiVortL2,psiVortGrad")?;
    for i in 0..rec.times.len() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt(rec.times[i]),
            fmt(rec.l2[i]),
            fmt(rec.h1[i]),
            fmt(rec.enstrophy[i]),
            fmt(rec.psi_l2[i]),
            fmt(rec.psi_grad[i]),
            fmt(rec.psi_vort_l2[i]),
            fmt(rec.psi_vort_grad[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One ledger CSV row per recorded time.
#[derive(Debug, Clone)]
pub struct LedgerRow {
    pub t: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e11: f64,
    pub e12: f64,
    pub etilde_psi: f64,
    pub etilde_1psi: f64,
    pub e_psi: f64,
    pub m1: f64,
    pub qv1: f64,
}

pub fn write_ledger_csv(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,E1,E2,E3,E11,E12,Etilde_psi,Etilde_1psi,E_psi,M1,QV1")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt(r.t),
            fmt(r.e1),
            fmt(r.e2),
            fmt(r.e3),
            fmt(r.e11),
            fmt(r.e12),
            fmt(r.etilde_psi),
            fmt(r.etilde_1psi),
            fmt(r.e_psi),
            fmt(r.m1),
            fmt(r.qv1),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Coupling block CSV: `(k, coupled, tv_estimate, novikov, sep_norm,
/// sigma_hit, tau_hit)`.
pub fn write_blocks_csv(path: &Path, rows: &[CouplingBlockOutcome]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "k,coupled,tv_estimate,novikov,sep_norm,sigma_hit,tau_hit")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.block,
            r.coupled as u8,
            fmt(r.tv_estimate),
            fmt(r.novikov_integral),
            fmt(r.sep_norm),
            r.sigma_hit.map(fmt).unwrap_or_else(|| "inf".into()),
            r.tau_hit.map(fmt).unwrap_or_else(|| "inf".into()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Weight sweep CSV in plot-ready long format:
/// `(t, R, x0_norm, ratio, branch)`.
pub struct WeightSweepRow {
    pub t: f64,
    pub radius: f64,
    pub x0_norm: f64,
    pub ratio: f64,
    pub branch: &'static str,
}

pub fn write_weight_sweep_csv(path: &Path, rows: &[WeightSweepRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,R,x0_norm,ratio,branch")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", fmt(r.t), fmt(r.radius), fmt(r.x0_norm), fmt(r.ratio), r.branch)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Deterministic manifest of an output directory: one `name sha256 bytes`
/// line per file, sorted by name. Identical runs produce identical bytes.
pub fn write_manifest(dir: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let mut entries: Vec<(String, String, u64)> = Vec::new();
    for f in files {
        let bytes = std::fs::read(f)?;
        let name = f
            .strip_prefix(dir)
            .unwrap_or(f)
            .to_string_lossy()
            .replace('\\', "/");
        entries.push((name, sha256_hex(&bytes), bytes.len() as u64));
    }
    entries.sort();
    let path = dir.join("MANIFEST.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    for (name, hash, len) in entries {
        writeln!(w, "{name} {hash} {len}")?;
    }
    w.flush()?;
    Ok(path)
}
