use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hybrid::{write_view, ACTION_DIM};

/// Fixed-size critic input: a server's roster view (`capacity` slots of
/// state and action, ascending user id, zero-padded) followed by one
/// candidate slot holding the scored user's own state and action, or zeros
/// when that user did not offload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticLayout {
    pub state_dim: usize,
    pub capacity: usize,
}

impl CriticLayout {
    pub fn new(state_dim: usize, capacity: usize) -> Self {
        CriticLayout { state_dim, capacity }
    }

    /// Width of one (state, action) slot.
    pub fn slot_width(&self) -> usize {
        self.state_dim + ACTION_DIM
    }

    pub fn view_len(&self) -> usize {
        self.capacity * self.slot_width()
    }

    pub fn input_dim(&self) -> usize {
        self.view_len() + self.slot_width()
    }

    /// Offset of the candidate slot's action.
    pub fn candidate_action_offset(&self) -> usize {
        self.view_len() + self.state_dim
    }

    /// Offset of `user`'s action inside the roster view, if present.
    pub fn view_action_offset(&self, roster: &[usize], user: usize) -> Option<usize> {
        let mut sorted: Vec<usize> = roster.to_vec();
        sorted.sort_unstable();
        sorted
            .iter()
            .position(|&u| u == user)
            .map(|slot| slot * self.slot_width() + self.state_dim)
    }

    /// Fills `row` for a user on `roster`. `candidate` names the user whose
    /// own slot is filled; `None` leaves it zero.
    pub fn fill_row(
        &self,
        row: &mut [f64],
        roster: &[usize],
        states: &[Vec<f64>],
        actions: &[[f64; ACTION_DIM]],
        candidate: Option<usize>,
    ) -> Result<()> {
        if row.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: row.len() });
        }
        let members: Vec<(usize, &[f64], [f64; ACTION_DIM])> = roster
            .iter()
            .map(|&u| {
                states
                    .get(u)
                    .zip(actions.get(u))
                    .map(|(s, a)| (u, s.as_slice(), *a))
                    .ok_or_else(|| Error::Structure(format!("roster member {u} has no state")))
            })
            .collect::<Result<_>>()?;
        let (view, own) = row.split_at_mut(self.view_len());
        write_view(view, self.capacity, self.state_dim, &members)?;
        own.fill(0.0);
        if let Some(c) = candidate {
            let s = states.get(c).ok_or_else(|| Error::Structure(format!("candidate {c} has no state")))?;
            if s.len() != self.state_dim {
                return Err(Error::Shape { expected: self.state_dim, got: s.len() });
            }
            own[..self.state_dim].copy_from_slice(s);
            own[self.state_dim..].copy_from_slice(&actions[c]);
        }
        Ok(())
    }

    /// One row per candidate, all sharing the same roster view.
    pub fn candidate_rows(
        &self,
        roster: &[usize],
        states: &[Vec<f64>],
        actions: &[[f64; ACTION_DIM]],
        candidates: &[usize],
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((candidates.len(), self.input_dim()));
        for (i, &c) in candidates.iter().enumerate() {
            let mut row = out.row_mut(i);
            let slice = row.as_slice_mut().expect("row-major");
            self.fill_row(slice, roster, states, actions, Some(c))?;
        }
        Ok(out)
    }
}
