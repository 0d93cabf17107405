//! One module per subcommand. Each takes a validated [`RunConfig`], writes
//! its outputs into a run directory, and reports an [`Outcome`].

pub mod collect;
pub mod eval;
pub mod ood;
pub mod pretrain;
pub mod train;

/// What a successfully executed command concluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// The drift monitor flagged at least one window (exit code 2).
    OodDetected,
}
