//! Secure scalar product between two clients through a commodity server.
//!
//! The server hands out correlated masks `(R_a, r_a)` and `(R_b, r_b)` with
//! `r_a + r_b = R_a . R_b`; the clients only ever exchange masked vectors,
//! relayed by the server, and the server recombines the two output shares.
//! All three roles run in-process and every exchanged value is recorded in a
//! [`ProtocolTranscript`].
//!
//! In step 5 client B sends its share `v_2` to the server along with `u`, so
//! the server ends up knowing `A . B`. Since the server also drew the masks
//! and relays the masked vectors, it could unmask them: the clients' vectors
//! are hidden from each other, not from the server.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::domain::{derive_seed, seeded_rng, ClientProfile};
use crate::error::{Error, Result};
use crate::graph::{min_max_normalize, profile_features, SimilarityMatrix};
use crate::matrix::SquareMatrix;
use crate::model::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    ClientA,
    ClientB,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Server => "server",
            Role::ClientA => "clientA",
            Role::ClientB => "clientB",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vector(Vec<f64>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    /// Step of the protocol the message belongs to (2 to 7).
    pub step: u8,
    pub sender: Role,
    pub receiver: Role,
    pub name: &'static str,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolTranscript {
    pub messages: Vec<Message>,
}

impl ProtocolTranscript {
    fn push(&mut self, step: u8, sender: Role, receiver: Role, name: &'static str, payload: Payload) {
        self.messages.push(Message {
            step,
            sender,
            receiver,
            name,
            payload,
        });
    }

    fn find(&self, sender: Role, receiver: Role, name: &str) -> Result<&Payload> {
        self.messages
            .iter()
            .find(|m| m.sender == sender && m.receiver == receiver && m.name == name)
            .map(|m| &m.payload)
            .ok_or_else(|| Error::Parse(format!("transcript lacks {sender}->{receiver} {name}")))
    }

    fn vector(&self, sender: Role, receiver: Role, name: &str) -> Result<&[f64]> {
        match self.find(sender, receiver, name)? {
            Payload::Vector(v) => Ok(v),
            Payload::Scalar(_) => Err(Error::Parse(format!("{name} should be a vector"))),
        }
    }

    fn scalar(&self, sender: Role, receiver: Role, name: &str) -> Result<f64> {
        match self.find(sender, receiver, name)? {
            Payload::Scalar(s) => Ok(*s),
            Payload::Vector(_) => Err(Error::Parse(format!("{name} should be a scalar"))),
        }
    }

    /// Re-derives the protocol output from the recorded messages alone,
    /// checking the mask correlation and client A's share computation on the
    /// way.
    pub fn audit(&self) -> Result<f64> {
        use Role::*;
        let ra_vec = self.vector(Server, ClientA, "R_a")?;
        let ra = self.scalar(Server, ClientA, "r_a")?;
        let rb_vec = self.vector(Server, ClientB, "R_b")?;
        let rb = self.scalar(Server, ClientB, "r_b")?;
        let b_hat = self.vector(Server, ClientA, "B_hat")?;
        let u = self.scalar(Server, ClientA, "u")?;
        let v1 = self.scalar(ClientA, Server, "v1")?;
        let v2 = self.scalar(ClientB, Server, "v2")?;
        let tol = |x: f64| 1e-9 * (1.0 + x.abs());
        let corr = dot(ra_vec, rb_vec);
        if (ra + rb - corr).abs() > tol(corr) {
            return Err(Error::InvalidInput("mask shares do not sum to R_a . R_b".into()));
        }
        let share = u - dot(ra_vec, b_hat) + ra;
        if (share - v1).abs() > tol(v1) {
            return Err(Error::InvalidInput("client A share inconsistent with transcript".into()));
        }
        Ok(v1 + v2)
    }

    /// One message per line: `step sender->receiver name values...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let values = match &m.payload {
                Payload::Scalar(s) => s.to_string(),
                Payload::Vector(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
            };
            out.push_str(&format!("{} {}->{} {} {}\n", m.step, m.sender, m.receiver, m.name, values));
        }
        out
    }
}

/// Runs the protocol on `a` (client A) and `b` (client B) and returns the
/// server's result together with the transcript.
pub fn scalar_product_protocol(a: &[f64], b: &[f64], protocol_seed: u64) -> Result<(f64, ProtocolTranscript)> {
    use Role::*;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "scalar product needs equal nonzero dimensions, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a.len();
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // masks on the scale of the inputs keep the cancellation error relative
    let scale = match inf_norm(a).max(inf_norm(b)) {
        s if s > 0.0 && s.is_finite() => s,
        _ => 1.0,
    };
    let mut server_rng = seeded_rng(protocol_seed, "sspp-server", &[]);
    let mut b_rng = seeded_rng(protocol_seed, "sspp-clientB", &[]);
    let mut t = ProtocolTranscript::default();

    // 1. server draws correlated masks
    let mask = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect()
    };
    let ra_vec = mask(&mut server_rng);
    let rb_vec = mask(&mut server_rng);
    let ra = scale * server_rng.random_range(-1.0..=1.0);
    let rb = dot(&ra_vec, &rb_vec) - ra;

    // 2. masks to the clients
    t.push(2, Server, ClientA, "R_a", Payload::Vector(ra_vec.clone()));
    t.push(2, Server, ClientA, "r_a", Payload::Scalar(ra));
    t.push(2, Server, ClientB, "R_b", Payload::Vector(rb_vec.clone()));
    t.push(2, Server, ClientB, "r_b", Payload::Scalar(rb));

    // 3. masked inputs to the server
    let a_hat: Vec<f64> = a.iter().zip(&ra_vec).map(|(x, r)| x + r).collect();
    let b_hat: Vec<f64> = b.iter().zip(&rb_vec).map(|(x, r)| x + r).collect();
    t.push(3, ClientA, Server, "A_hat", Payload::Vector(a_hat.clone()));
    t.push(3, ClientB, Server, "B_hat", Payload::Vector(b_hat.clone()));

    // 4. server relays them crosswise
    t.push(4, Server, ClientB, "A_hat", Payload::Vector(a_hat.clone()));
    t.push(4, Server, ClientA, "B_hat", Payload::Vector(b_hat.clone()));

    // 5. client B masks its side of the product
    let v2 = scale * b_rng.random_range(-1.0..=1.0);
    let u = dot(&a_hat, b) + rb - v2;
    t.push(5, ClientB, Server, "u", Payload::Scalar(u));
    t.push(5, ClientB, Server, "v2", Payload::Scalar(v2));

    // 6. server forwards u
    t.push(6, Server, ClientA, "u", Payload::Scalar(u));

    // 7. client A unmasks its share
    let v1 = u - dot(&ra_vec, &b_hat) + ra;
    t.push(7, ClientA, Server, "v1", Payload::Scalar(v1));

    // 8. server combines
    Ok((v1 + v2, t))
}

/// Pairwise dot products of the clients' feature vectors obtained through
/// the protocol, then min-max normalised like the direct computation.
pub fn build_similarity_via_sspp(profiles: &[ClientProfile], protocol_seed: u64) -> Result<SimilarityMatrix> {
    let feats = profile_features(profiles)?;
    let n = feats.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let seed = derive_seed(protocol_seed, "sspp-pair", &[i as u64, j as u64]);
            scalar_product_protocol(feats[i], feats[j], seed).map(|(r, _)| r)
        })
        .collect::<Result<_>>()?;
    let mut raw = SquareMatrix::zeros(n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        raw[(i, j)] = v;
        raw[(j, i)] = v;
    }
    Ok(min_max_normalize(&raw))
}
