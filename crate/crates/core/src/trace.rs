//! Time-indexed state sequences with role-annotated coordinates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::num::{fmt_q, Q};

pub type Roles = BTreeMap<String, Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<Vec<Q>>,
    pub roles: Roles,
    pub halted_at: Option<usize>,
}

impl Trace {
    pub fn new(initial: Vec<Q>, roles: Roles) -> Self {
        Trace { states: vec![initial], roles, halted_at: None }
    }

    pub fn last(&self) -> &[Q] {
        self.states.last().expect("trace is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Role name of every coordinate, `"coord"` when unassigned.
    pub fn role_names(&self) -> Vec<String> {
        let m = self.states.first().map_or(0, Vec::len);
        let mut names = vec![String::from("coord"); m];
        for (role, idx) in &self.roles {
            for (k, &i) in idx.iter().enumerate() {
                if i < m {
                    names[i] = format!("{role}[{k}]");
                }
            }
        }
        names
    }

    /// Long-format CSV: `step,coord,role,value` with exact `p/q` values.
    pub fn to_csv(&self) -> String {
        let names = self.role_names();
        let mut s = String::from("step,coord,role,value\n");
        for (n, st) in self.states.iter().enumerate() {
            for (i, v) in st.iter().enumerate() {
                let _ = writeln!(s, "{n},{i},{},{}", names[i], fmt_q(v));
            }
        }
        s
    }

    pub fn to_json(&self) -> Value {
        json!({
            "roles": self.roles,
            "halted_at": self.halted_at,
            "states": self.states.iter()
                .map(|st| st.iter().map(fmt_q).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }
}
