//! Text-only reasoning with on-demand visual queries.
//!
//! A text-only reasoning model drives a loop; whenever it needs to know
//! something about the image it asks a separate vision model a question and
//! gets textual evidence back. See [`scheduler::Scheduler`] for the loop,
//! [`harness`] for batch runs and scoring, and [`audit`] for transcripts and
//! the hallucination judge.

pub mod audit;
pub mod clock;
pub mod config;
pub mod convert;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod pool;
pub mod prompts;
pub mod router;
pub mod scheduler;
pub mod selftest;
pub mod task;
