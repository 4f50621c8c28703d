//! Filtered hierarchical generative model of sequences on binary trees.
//!
//! A random grammar (a transition tensor `M[a][b][c]` over a vocabulary of
//! `q` symbols) generates a complete binary tree of depth `ell` from a root
//! symbol. Filtering at level `k` replaces the top `k` generations by
//! conditionally independent draws given the root. On top of the sampler the
//! crate provides exact belief propagation (matched and mismatched), a
//! brute-force enumeration oracle, a transformer-shaped embedding of BP and a
//! Monte-Carlo accuracy harness.
//!
//! # Conventions
//!
//! Inside the library symbols are 0-based (`0..q`) and leaves are 0-based
//! (`0..2^ell`). Files and the command line use 1-based symbols and leaf
//! positions; the conversion happens in [`io`] only.
//!
//! Nodes are indexed in level order: the root is 0, the children of `n` are
//! `2n+1` (left) and `2n+2` (right), and leaf `i` is node `2^ell - 1 + i`.

pub mod bp;
pub mod dataset;
pub mod embed;
mod error;
pub mod evalgrid;
pub mod grammar;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
