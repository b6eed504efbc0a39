use serde::{Deserialize, Serialize};

use super::records::{Course, InteractionRecord};
use crate::{Error, Result};

/// A sequence slot: either a real event or padding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot<T> {
    Pad,
    Item(T),
}

impl<T> Slot<T> {
    pub fn item(&self) -> Option<&T> {
        match self {
            Slot::Pad => None,
            Slot::Item(t) => Some(t),
        }
    }

    pub fn is_pad(&self) -> bool {
        matches!(self, Slot::Pad)
    }
}

/// Anything that carries a course tag and a chronological sort key.
pub trait Chronological {
    fn course(&self) -> Course;
}

impl Chronological for InteractionRecord {
    fn course(&self) -> Course {
        self.course
    }
}

/// An encoded interaction: dense question index, its course, and the response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub question: usize,
    pub course: Course,
    pub response: u8,
}

impl Chronological for Step {
    fn course(&self) -> Course {
        self.course
    }
}

/// The merged cross-course sequence plus the two padded per-course views.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedTriple<T = InteractionRecord> {
    pub merged: Vec<T>,
    pub view_x: Vec<Slot<T>>,
    pub view_y: Vec<Slot<T>>,
}

impl<T> Default for AlignedTriple<T> {
    fn default() -> Self {
        Self {
            merged: Vec::new(),
            view_x: Vec::new(),
            view_y: Vec::new(),
        }
    }
}

impl<T: Clone + Chronological> AlignedTriple<T> {
    /// Builds the per-course views from an already-merged sequence.
    pub fn from_merged(merged: Vec<T>) -> Self {
        let slot = |t: &T, c: Course| {
            if t.course() == c {
                Slot::Item(t.clone())
            } else {
                Slot::Pad
            }
        };
        let view_x = merged.iter().map(|t| slot(t, Course::X)).collect();
        let view_y = merged.iter().map(|t| slot(t, Course::Y)).collect();
        Self {
            merged,
            view_x,
            view_y,
        }
    }

    pub fn len(&self) -> usize {
        self.merged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    pub fn view(&self, course: Course) -> &[Slot<T>] {
        match course {
            Course::X => &self.view_x,
            Course::Y => &self.view_y,
        }
    }

    /// Non-PAD entries of one view, in order.
    pub fn strip(&self, course: Course) -> Vec<T> {
        self.view(course)
            .iter()
            .filter_map(|s| s.item().cloned())
            .collect()
    }

    pub fn count(&self, course: Course) -> usize {
        self.view(course).iter().filter(|s| !s.is_pad()).count()
    }

    pub fn map<U: Clone + Chronological>(&self, f: impl FnMut(&T) -> U) -> AlignedTriple<U> {
        AlignedTriple::from_merged(self.merged.iter().map(f).collect())
    }
}

impl<T: Clone + Chronological + PartialEq> AlignedTriple<T> {
    /// Checks the structural invariants: equal lengths, exactly one view
    /// non-PAD per position, matching the merged entry and its course.
    pub fn validate(&self) -> Result<()> {
        let n = self.merged.len();
        if self.view_x.len() != n || self.view_y.len() != n {
            return Err(Error::Validation(format!(
                "view lengths {}/{} differ from merged length {n}",
                self.view_x.len(),
                self.view_y.len()
            )));
        }
        for (i, m) in self.merged.iter().enumerate() {
            let (own, other) = match m.course() {
                Course::X => (&self.view_x[i], &self.view_y[i]),
                Course::Y => (&self.view_y[i], &self.view_x[i]),
            };
            if own.item() != Some(m) || !other.is_pad() {
                return Err(Error::Validation(format!(
                    "position {i}: views do not align with merged entry"
                )));
            }
        }
        Ok(())
    }
}

/// Interleaves two chronological per-course sequences by
/// (timestamp, course, question id) and pads the per-course views.
pub fn merge_and_pad(
    seq_x: &[InteractionRecord],
    seq_y: &[InteractionRecord],
) -> AlignedTriple<InteractionRecord> {
    let mut merged = Vec::with_capacity(seq_x.len() + seq_y.len());
    let (mut i, mut j) = (0, 0);
    while i < seq_x.len() && j < seq_y.len() {
        if seq_y[j].order_key() < seq_x[i].order_key() {
            merged.push(seq_y[j].clone());
            j += 1;
        } else {
            merged.push(seq_x[i].clone());
            i += 1;
        }
    }
    merged.extend_from_slice(&seq_x[i..]);
    merged.extend_from_slice(&seq_y[j..]);
    AlignedTriple::from_merged(merged)
}

/// Keeps the most recent `max_len` merged slots.
pub fn truncate<T: Clone + Chronological>(
    triple: &AlignedTriple<T>,
    max_len: usize,
) -> AlignedTriple<T> {
    let n = triple.len();
    let start = n.saturating_sub(max_len.max(1));
    AlignedTriple::from_merged(triple.merged[start..].to_vec())
}
