//! Request selection rules. Each picker looks only at requests whose next
//! DRAM command is legal this cycle.

use crate::dram::{Command, Cycle, Dram};

use super::queue::{Entry, ReqKind, RequestQueue};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PickAction {
    Cmd(Command),
    /// Join the on-demand RNG operation for this request.
    CommitRng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pick {
    pub index: usize,
    pub action: PickAction,
    pub hit: bool,
}

/// Next command an open-page controller needs for `e`.
pub fn next_command(dram: &Dram, channel: usize, e: &Entry) -> Command {
    match dram.channel(channel).banks[e.bank].open_row {
        Some(r) if r == e.loc.row => {
            if e.req.kind == ReqKind::Write {
                Command::Wr
            } else {
                Command::Rd
            }
        }
        Some(_) => Command::Pre,
        None => Command::Act,
    }
}

/// `Some((action, is_row_hit))` when `e` can make progress at `now`.
/// `rng_ok` is false while a read that already opened its row still waits
/// for its column command; committing then would close that row.
pub fn candidate(dram: &Dram, channel: usize, e: &Entry, now: Cycle, rng_ok: bool) -> Option<(PickAction, bool)> {
    if e.is_rng() {
        return (rng_ok && !dram.channel(channel).blocked(now)).then_some((PickAction::CommitRng, false));
    }
    let cmd = next_command(dram, channel, e);
    dram.can_issue(cmd, channel, e.bank, now).then_some((PickAction::Cmd(cmd), cmd.is_column()))
}

/// Queue entries a policy may consider. Only the oldest RNG request can be
/// committed, so every channel joins the same on-demand operation.
fn eligible(q: &RequestQueue) -> impl Iterator<Item = (usize, &Entry)> {
    let first_rng = q.entries().iter().position(|e| e.is_rng());
    q.entries().iter().enumerate().filter(move |(i, e)| !e.is_rng() || Some(*i) == first_rng)
}

/// FR-FCFS with a column cap: the oldest issuable row hit, else the oldest
/// issuable request. A hit to a bank that has already served `cap` hits past
/// older requests is held back while any older request is queued.
pub fn pick_frfcfs_cap(
    q: &RequestQueue,
    dram: &Dram,
    channel: usize,
    now: Cycle,
    hit_streak: &[u32],
    cap: u32,
    rng_ok: bool,
) -> Option<Pick> {
    let mut oldest = None;
    for (index, e) in eligible(q) {
        let Some((action, hit)) = candidate(dram, channel, e, now, rng_ok) else {
            continue;
        };
        if hit && index > 0 && hit_streak[e.bank] >= cap {
            continue;
        }
        let pick = Pick { index, action, hit };
        if hit {
            return Some(pick);
        }
        if oldest.is_none() {
            oldest = Some(pick);
        }
    }
    oldest
}

/// BLISS: non-blacklisted applications first, then row hits, then age.
pub fn pick_bliss(
    q: &RequestQueue,
    dram: &Dram,
    channel: usize,
    now: Cycle,
    blacklist: &[bool],
    rng_ok: bool,
) -> Option<Pick> {
    eligible(q)
        .filter_map(|(index, e)| {
            let (action, hit) = candidate(dram, channel, e, now, rng_ok)?;
            let listed = blacklist.get(e.req.core).copied().unwrap_or(false);
            Some(((listed, !hit, index), Pick { index, action, hit }))
        })
        .min_by_key(|(key, _)| *key)
        .map(|(_, p)| p)
}
