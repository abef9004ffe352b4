//! Command-line surface of the `dtisynth` toolkit.
//!
//! Six verbs tie the pipeline together:
//!
//! | verb         | role                                                    |
//! |--------------|---------------------------------------------------------|
//! | `phantom`    | generate the paired synthetic volumes                   |
//! | `train`      | adversarial training, optional paired warm-start        |
//! | `synthesize` | full-volume inference through a checkpoint              |
//! | `evaluate`   | three-metric report plus optional PGM slice dumps       |
//! | `gradcheck`  | finite-difference verification of every layer/objective |
//! | `ablate`     | three-mode comparison sweep over seeds                  |
//!
//! Every command is deterministic given its configuration and seeds, and
//! exit codes are a stable contract (see [`error`]).

pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
