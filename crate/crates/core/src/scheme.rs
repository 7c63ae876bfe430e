//! Construction of either scheme behind the common trait.

use std::sync::Arc;

use thiserror::Error;

use crate::gdm::{GradientDiscretisation, SchemeKind};
use crate::hmm::{build_hmm, HmmError, HmmOptions};
use crate::mesh::Mesh;
use crate::p1::{build_p1, P1Error, P1Options};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    P1(#[from] P1Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    pub kind: SchemeKind,
    pub hmm: HmmOptions,
    pub p1: P1Options,
}

impl SchemeOptions {
    pub fn new(kind: SchemeKind) -> Self {
        Self { kind, hmm: HmmOptions::default(), p1: P1Options::default() }
    }
}

pub fn build_scheme(mesh: Arc<Mesh>, options: &SchemeOptions) -> Result<Box<dyn GradientDiscretisation>, SchemeError> {
    Ok(match options.kind {
        SchemeKind::Hmm => Box::new(build_hmm(mesh, options.hmm)?),
        SchemeKind::P1 => Box::new(build_p1(mesh, options.p1)?),
    })
}
