//! Line-oriented CSV format for episodes (demonstrations and logged rollouts).
//!
//! One row per transition:
//! `episode,step,s0..s12,a0..a5,ns0..ns12,reward,done,success`.
//! Floats use shortest round-trip formatting, so reading back is bit-exact.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::types::{Action, Episode, Observation, Transition, TypeError, ACTION_DIM, OBS_DIM};

const FIELDS: usize = 2 + OBS_DIM + ACTION_DIM + OBS_DIM + 3;

#[derive(Debug, Error)]
pub enum EpisodeIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: TypeError },
}

pub fn header() -> String {
    let mut cols = vec!["episode".to_string(), "step".to_string()];
    cols.extend((0..OBS_DIM).map(|i| format!("s{i}")));
    cols.extend((0..ACTION_DIM).map(|i| format!("a{i}")));
    cols.extend((0..OBS_DIM).map(|i| format!("ns{i}")));
    cols.extend(["reward", "done", "success"].map(String::from));
    cols.join(",")
}

pub fn write_episodes<W: Write>(w: &mut W, episodes: &[Episode]) -> std::io::Result<()> {
    writeln!(w, "{}", header())?;
    for (e, ep) in episodes.iter().enumerate() {
        for (t, tr) in ep.transitions().iter().enumerate() {
            let mut row = Vec::with_capacity(FIELDS);
            row.push(e.to_string());
            row.push(t.to_string());
            row.extend(tr.obs.as_array().iter().map(|v| format!("{v:?}")));
            row.extend(tr.action.as_array().iter().map(|v| format!("{v:?}")));
            row.extend(tr.next_obs.as_array().iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", tr.reward));
            row.push((tr.done as u8).to_string());
            row.push((tr.success as u8).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

fn parse_f(line: usize, s: &str) -> Result<f64, EpisodeIoError> {
    s.parse().map_err(|_| EpisodeIoError::Parse {
        line,
        msg: format!("bad number '{s}'"),
    })
}

fn parse_flag(line: usize, s: &str) -> Result<bool, EpisodeIoError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(EpisodeIoError::Parse {
            line,
            msg: format!("bad flag '{s}'"),
        }),
    }
}

/// Reads episodes in file order. Rows must be grouped by episode index with
/// consecutive step numbers starting at 0.
pub fn read_episodes<R: BufRead>(r: R) -> Result<Vec<Episode>, EpisodeIoError> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == header() => {}
        _ => {
            return Err(EpisodeIoError::Parse {
                line: 1,
                msg: "missing or unexpected header".into(),
            })
        }
    }
    let mut episodes = Vec::new();
    let mut current: Vec<Transition> = Vec::new();
    let mut current_id: Option<usize> = None;
    let finish = |ts: Vec<Transition>, line: usize| {
        Episode::new(ts, usize::MAX).map_err(|source| EpisodeIoError::Invalid { line, source })
    };
    let mut n = 1;
    for line in lines {
        n += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != FIELDS {
            return Err(EpisodeIoError::Parse {
                line: n,
                msg: format!("expected {FIELDS} fields, got {}", cols.len()),
            });
        }
        let bad_index = || EpisodeIoError::Parse {
            line: n,
            msg: "bad episode/step index".into(),
        };
        let ep: usize = cols[0].parse().map_err(|_| bad_index())?;
        let step: usize = cols[1].parse().map_err(|_| bad_index())?;
        if current_id != Some(ep) {
            if !current.is_empty() {
                episodes.push(finish(std::mem::take(&mut current), n - 1)?);
            }
            current_id = Some(ep);
        }
        if step != current.len() {
            return Err(EpisodeIoError::Parse {
                line: n,
                msg: format!("expected step {}, found {step}", current.len()),
            });
        }
        let nums: Vec<f64> = cols[2..2 + 2 * OBS_DIM + ACTION_DIM + 1]
            .iter()
            .map(|s| parse_f(n, s))
            .collect::<Result<_, _>>()?;
        let invalid = |source| EpisodeIoError::Invalid { line: n, source };
        let obs = Observation::from_stored(nums[..OBS_DIM].try_into().unwrap()).map_err(invalid)?;
        let action = Action::from_slice(&nums[OBS_DIM..OBS_DIM + ACTION_DIM]).map_err(invalid)?;
        let next_obs =
            Observation::from_stored(nums[OBS_DIM + ACTION_DIM..2 * OBS_DIM + ACTION_DIM].try_into().unwrap())
                .map_err(invalid)?;
        let reward = nums[2 * OBS_DIM + ACTION_DIM];
        let done = parse_flag(n, cols[FIELDS - 2])?;
        let success = parse_flag(n, cols[FIELDS - 1])?;
        current.push(Transition::new(obs, action, next_obs, reward, done, success).map_err(invalid)?);
    }
    if !current.is_empty() {
        episodes.push(finish(current, n)?);
    }
    Ok(episodes)
}
