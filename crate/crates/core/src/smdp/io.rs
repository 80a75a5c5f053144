//! Transition batch files: a flat columnar little-endian binary and a CSV mirror.
//!
//! Binary layout:
//!
//! ```text
//! magic "DEARTRN1" | u32 version | u32 state_dim | u32 action_dim | u64 rows
//! state_0[rows] .. state_{S-1}[rows]
//! proposed_action_0[rows] .. | executed_action_0[rows] .. | next_state_0[rows] ..
//! reward[rows] (f64) | cost[rows] (u8) | done[rows] (u8) | corrected[rows] (u8)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Transition;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DEARTRN1";
const VERSION: u32 = 1;

fn dims(transitions: &[Transition]) -> Result<(usize, usize)> {
    let Some(first) = transitions.first() else {
        return Ok((0, 0));
    };
    let (s, a) = (first.state.len(), first.proposed_action.len());
    for t in transitions {
        t.validate()?;
        if t.state.len() != s {
            return Err(Error::ShapeMismatch { expected: s, got: t.state.len() });
        }
        if t.proposed_action.len() != a {
            return Err(Error::ShapeMismatch { expected: a, got: t.proposed_action.len() });
        }
    }
    Ok((s, a))
}

pub(crate) fn write_transitions_to<W: Write>(w: &mut W, transitions: &[Transition]) -> Result<()> {
    let (s_dim, a_dim) = dims(transitions)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(s_dim as u32).to_le_bytes())?;
    w.write_all(&(a_dim as u32).to_le_bytes())?;
    w.write_all(&(transitions.len() as u64).to_le_bytes())?;
    let columns: [(fn(&Transition) -> &[f64], usize); 4] = [
        (|t| &t.state, s_dim),
        (|t| &t.proposed_action, a_dim),
        (|t| &t.executed_action, a_dim),
        (|t| &t.next_state, s_dim),
    ];
    for (field, width) in columns {
        for j in 0..width {
            for t in transitions {
                w.write_all(&field(t)[j].to_le_bytes())?;
            }
        }
    }
    for t in transitions {
        w.write_all(&t.reward.to_le_bytes())?;
    }
    for flag in [
        (|t: &Transition| t.cost) as fn(&Transition) -> u8,
        |t| u8::from(t.done),
        |t| u8::from(t.corrected),
    ] {
        let bytes: Vec<u8> = transitions.iter().map(flag).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64_column<R: Read>(r: &mut R, rows: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; rows * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn read_transitions_from<R: Read>(r: &mut R, path: &Path) -> Result<Vec<Transition>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { path: path.into(), reason: "bad magic".into() });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format { path: path.into(), reason: format!("unsupported version {version}") });
    }
    let s_dim = read_u32(r)? as usize;
    let a_dim = read_u32(r)? as usize;
    let rows = read_u64(r)? as usize;
    let mut read_block = |width: usize| -> Result<Vec<Vec<f64>>> {
        (0..width).map(|_| read_f64_column(r, rows)).collect()
    };
    let state = read_block(s_dim)?;
    let proposed = read_block(a_dim)?;
    let executed = read_block(a_dim)?;
    let next_state = read_block(s_dim)?;
    let reward = read_f64_column(r, rows)?;
    let mut flags = vec![0u8; rows * 3];
    r.read_exact(&mut flags)?;
    let gather = |cols: &[Vec<f64>], i: usize| cols.iter().map(|c| c[i]).collect::<Vec<_>>();
    let out: Vec<Transition> = (0..rows)
        .map(|i| Transition {
            state: gather(&state, i),
            proposed_action: gather(&proposed, i),
            executed_action: gather(&executed, i),
            next_state: gather(&next_state, i),
            reward: reward[i],
            cost: flags[i],
            done: flags[rows + i] != 0,
            corrected: flags[2 * rows + i] != 0,
        })
        .collect();
    for t in &out {
        t.validate().map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    }
    Ok(out)
}

pub fn write_transitions_bin(path: &Path, transitions: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_transitions_to(&mut w, transitions)?;
    w.flush()?;
    Ok(())
}

pub fn read_transitions_bin(path: &Path) -> Result<Vec<Transition>> {
    let mut r = BufReader::new(File::open(path)?);
    read_transitions_from(&mut r, path)
}

fn header(s_dim: usize, a_dim: usize) -> Vec<String> {
    let mut h = Vec::new();
    h.extend((0..s_dim).map(|i| format!("state_{i}")));
    h.extend((0..a_dim).map(|i| format!("proposed_action_{i}")));
    h.extend((0..a_dim).map(|i| format!("executed_action_{i}")));
    h.extend((0..s_dim).map(|i| format!("next_state_{i}")));
    h.extend(["reward", "cost", "done", "corrected"].map(String::from));
    h
}

pub fn write_transitions_csv(path: &Path, transitions: &[Transition]) -> Result<()> {
    let (s_dim, a_dim) = dims(transitions)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(s_dim, a_dim))?;
    for t in transitions {
        let mut row: Vec<String> = Vec::with_capacity(2 * (s_dim + a_dim) + 4);
        for v in t.state.iter().chain(&t.proposed_action).chain(&t.executed_action).chain(&t.next_state) {
            row.push(format!("{v:?}"));
        }
        row.push(format!("{:?}", t.reward));
        row.push(t.cost.to_string());
        row.push(u8::from(t.done).to_string());
        row.push(u8::from(t.corrected).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transitions_csv(path: &Path) -> Result<Vec<Transition>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let count = |prefix: &str| headers.iter().filter(|h| h.starts_with(prefix)).count();
    let (s_dim, a_dim) = (count("state_"), count("proposed_action_"));
    if headers.len() != 2 * (s_dim + a_dim) + 4 {
        return Err(Error::Format { path: path.into(), reason: "unexpected header".into() });
    }
    let bad = |reason: String| Error::Format { path: path.into(), reason };
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let vals: Vec<f64> = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = vals[at..at + n].to_vec();
            at += n;
            s
        };
        let state = take(s_dim);
        let proposed_action = take(a_dim);
        let executed_action = take(a_dim);
        let next_state = take(s_dim);
        let tail = take(4);
        let t = Transition {
            state,
            proposed_action,
            executed_action,
            next_state,
            reward: tail[0],
            cost: tail[1] as u8,
            done: tail[2] != 0.0,
            corrected: tail[3] != 0.0,
        };
        t.validate().map_err(|e| bad(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_transition() -> impl Strategy<Value = Transition> {
        (
            prop::collection::vec(-1e6f64..1e6, 3),
            prop::collection::vec(-1.0f64..1.0, 2),
            prop::collection::vec(-1.0f64..1.0, 2),
            prop::collection::vec(-1e6f64..1e6, 3),
            -10.0f64..10.0,
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(state, proposed_action, executed_action, next_state, reward, failed, done, corrected)| {
                Transition {
                    state,
                    proposed_action,
                    executed_action,
                    next_state,
                    reward,
                    cost: u8::from(failed),
                    done: done || failed,
                    corrected,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn binary_and_csv_round_trip(batch in prop::collection::vec(arb_transition(), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let bin = dir.path().join("t.bin");
            let csv = dir.path().join("t.csv");
            write_transitions_bin(&bin, &batch).unwrap();
            prop_assert_eq!(&read_transitions_bin(&bin).unwrap(), &batch);
            if !batch.is_empty() {
                write_transitions_csv(&csv, &batch).unwrap();
                prop_assert_eq!(&read_transitions_csv(&csv).unwrap(), &batch);
            }
        }
    }

    #[test]
    fn csv_header_layout() {
        assert_eq!(
            header(2, 1),
            vec![
                "state_0", "state_1", "proposed_action_0", "executed_action_0", "next_state_0",
                "next_state_1", "reward", "cost", "done", "corrected"
            ]
        );
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"NOTMAGIC00000000000000000000").unwrap();
        assert!(matches!(read_transitions_bin(&p), Err(Error::Format { .. })));
    }
}
