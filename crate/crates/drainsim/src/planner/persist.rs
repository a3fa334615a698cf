//! Flat binary persistence for tables and plan artifacts.
//!
//! Every file starts with a magic tag, a format version, and a SHA-256
//! digest of the generating inputs (grid axes, population, system
//! parameters). Loading verifies the digest against the caller's current
//! inputs; a mismatch is a hard error rather than a silent rebuild, since a
//! stale table poisons every downstream experiment.

use crate::params::{Population, SystemParams};
use crate::planner::grid::GridSpec;
use crate::planner::solve::{Checkpoint, PlanSolution};
use crate::planner::table::GuardedTable;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const TABLE_MAGIC: &[u8; 4] = b"DSTB";
const PLAN_MAGIC: &[u8; 4] = b"DSPL";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("artifact i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {expected} artifact (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported artifact version {found} (expected {VERSION})")]
    BadVersion { found: u32 },
    #[error(
        "artifact was built from different inputs (digest mismatch); \
         rebuild it with the current configuration"
    )]
    DigestMismatch,
    #[error("artifact is truncated or corrupt: {0}")]
    Corrupt(&'static str),
}

/// SHA-256 digest of everything the table contents depend on.
pub fn input_digest(grid: &GridSpec, pop: &Population, params: &SystemParams) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for axis in [
        &grid.q_points,
        &grid.s_points,
        &grid.b_points,
        &grid.s_tar_prev_points,
        &grid.p_points,
        &grid.s_tar_points,
    ] {
        hasher.update((axis.len() as u64).to_le_bytes());
        for &v in axis.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.update((pop.len() as u64).to_le_bytes());
    for tenant in pop.types() {
        hasher.update(tenant.w.to_le_bytes());
        hasher.update(tenant.slo.as_f64().to_le_bytes());
        hasher.update(tenant.delta_k.to_le_bytes());
        hasher.update(tenant.rho.to_le_bytes());
    }
    for field in [
        params.delta,
        params.gamma,
        params.mu,
        params.eps_delay,
        params.q_max,
        params.s_max,
        params.b_max,
        params.p_min,
        params.p_max,
        params.omega,
        params.nu,
        params.chi,
        params.c_op,
        params.c_b,
        params.eta_tar,
        params.phi0,
        params.zeta,
    ] {
        hasher.update(field.to_le_bytes());
    }
    hasher.finalize().into()
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_u32s(w: &mut impl Write, values: &[u32]) -> std::io::Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_len(r: &mut impl Read) -> Result<usize, PersistError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let len = u64::from_le_bytes(buf);
    if len > (1 << 33) {
        return Err(PersistError::Corrupt("implausible array length"));
    }
    Ok(len as usize)
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>, PersistError> {
    let len = read_len(r)?;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_u32s(r: &mut impl Read) -> Result<Vec<u32>, PersistError> {
    let len = read_len(r)?;
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 4];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(u32::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, PersistError> {
    let len = read_len(r)?;
    let mut out = vec![0u8; len];
    r.read_exact(&mut out)?;
    Ok(out)
}

fn check_header(
    r: &mut impl Read,
    magic: &[u8; 4],
    expected: &'static str,
    digest: &[u8; 32],
) -> Result<(), PersistError> {
    let mut found_magic = [0u8; 4];
    r.read_exact(&mut found_magic)?;
    if &found_magic != magic {
        return Err(PersistError::BadMagic { expected });
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let found = u32::from_le_bytes(version);
    if found != VERSION {
        return Err(PersistError::BadVersion { found });
    }
    let mut found_digest = [0u8; 32];
    r.read_exact(&mut found_digest)?;
    if &found_digest != digest {
        return Err(PersistError::DigestMismatch);
    }
    Ok(())
}

/// Writes a table next to its input digest.
pub fn save_table(path: &Path, table: &GuardedTable, digest: &[u8; 32]) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TABLE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    w.write_all(&[u8::from(table.shielded)])?;
    w.write_all(&(table.n_states as u64).to_le_bytes())?;
    w.write_all(&(table.n_actions as u64).to_le_bytes())?;
    w.write_all(&(table.n_s_tar() as u64).to_le_bytes())?;
    write_u32s(&mut w, &table.next_index)?;
    write_f64s(&mut w, &table.reward)?;
    write_f64s(&mut w, &table.exec_p)?;
    w.write_all(&(table.mode.len() as u64).to_le_bytes())?;
    w.write_all(&table.mode)?;
    write_f64s(&mut w, &table.p_safe)?;
    write_f64s(&mut w, &table.s_eff)?;
    w.flush()?;
    Ok(())
}

/// Loads a table, verifying the digest of the current inputs.
pub fn load_table(path: &Path, digest: &[u8; 32]) -> Result<GuardedTable, PersistError> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, TABLE_MAGIC, "table", digest)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let shielded = flag[0] != 0;
    let mut dims = [0u8; 8];
    r.read_exact(&mut dims)?;
    let n_states = u64::from_le_bytes(dims) as usize;
    r.read_exact(&mut dims)?;
    let n_actions = u64::from_le_bytes(dims) as usize;
    r.read_exact(&mut dims)?;
    let n_s_tar = u64::from_le_bytes(dims) as usize;

    let next_index = read_u32s(&mut r)?;
    let reward = read_f64s(&mut r)?;
    let exec_p = read_f64s(&mut r)?;
    let mode = read_bytes(&mut r)?;
    let p_safe = read_f64s(&mut r)?;
    let s_eff = read_f64s(&mut r)?;

    let pairs = n_states * n_actions;
    if next_index.len() != pairs
        || reward.len() != pairs
        || exec_p.len() != pairs
        || mode.len() != pairs
        || p_safe.len() != n_states * n_s_tar
        || s_eff.len() != n_states * n_s_tar
    {
        return Err(PersistError::Corrupt("array lengths disagree with dimensions"));
    }
    Ok(GuardedTable::from_parts(
        shielded, n_states, n_actions, n_s_tar, next_index, reward, exec_p, mode, p_safe, s_eff,
    ))
}

/// Writes the VI solution plus DP checkpoints in one artifact.
pub fn save_plans(
    path: &Path,
    gamma: f64,
    shielded: bool,
    vi: &PlanSolution,
    checkpoints: &[Checkpoint],
    digest: &[u8; 32],
) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PLAN_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    w.write_all(&gamma.to_le_bytes())?;
    w.write_all(&[u8::from(shielded)])?;
    write_f64s(&mut w, &vi.values)?;
    write_u32s(&mut w, &vi.policy)?;
    w.write_all(&(checkpoints.len() as u64).to_le_bytes())?;
    for cp in checkpoints {
        w.write_all(&cp.h.to_le_bytes())?;
        write_f64s(&mut w, &cp.plan.values)?;
        write_u32s(&mut w, &cp.plan.policy)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a plan artifact, verifying digest and gamma.
pub fn load_plans(
    path: &Path,
    gamma: f64,
    digest: &[u8; 32],
) -> Result<(bool, PlanSolution, Vec<Checkpoint>), PersistError> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, PLAN_MAGIC, "plan", digest)?;
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let stored_gamma = f64::from_le_bytes(buf);
    if stored_gamma.to_bits() != gamma.to_bits() {
        return Err(PersistError::DigestMismatch);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let shielded = flag[0] != 0;
    let values = read_f64s(&mut r)?;
    let policy = read_u32s(&mut r)?;
    if values.len() != policy.len() {
        return Err(PersistError::Corrupt("value/policy lengths disagree"));
    }
    let n_checkpoints = read_len(&mut r)?;
    let mut checkpoints = Vec::with_capacity(n_checkpoints);
    let mut h_buf = [0u8; 4];
    for _ in 0..n_checkpoints {
        r.read_exact(&mut h_buf)?;
        let h = u32::from_le_bytes(h_buf);
        let cp_values = read_f64s(&mut r)?;
        let cp_policy = read_u32s(&mut r)?;
        if cp_values.len() != values.len() || cp_policy.len() != policy.len() {
            return Err(PersistError::Corrupt("checkpoint lengths disagree"));
        }
        checkpoints.push(Checkpoint {
            h,
            plan: PlanSolution {
                values: cp_values,
                policy: cp_policy,
            },
        });
    }
    Ok((shielded, PlanSolution { values, policy }, checkpoints))
}
