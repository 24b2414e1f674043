use der_core::types::{Action, Episode, Observation, Transition};

/// Observation whose x coordinate carries `tag`, so stored transitions can be
/// identified after they pass through a buffer.
pub fn tagged_obs(tag: f64) -> Observation {
    Observation::new([tag, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0; 6]).unwrap()
}

pub fn tagged(tag: u64, done: bool, success: bool) -> Transition {
    Transition::new(tagged_obs(tag as f64), Action::zero(), tagged_obs(tag as f64), -1.0, done, success).unwrap()
}

pub fn tag_of(t: &Transition) -> u64 {
    t.obs.position()[0] as u64
}

/// Episode of `len` transitions tagged `first..first + len`.
pub fn tagged_episode(first: u64, len: usize, success: bool) -> Episode {
    let ts = (0..len)
        .map(|i| {
            let last = i + 1 == len;
            tagged(first + i as u64, last, last && success)
        })
        .collect();
    Episode::new(ts, usize::MAX).unwrap()
}
