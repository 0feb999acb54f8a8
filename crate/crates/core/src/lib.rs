//! Review feedback agent: a multi-stage LLM pipeline that drafts gated
//! feedback on peer reviews, the randomized-experiment harness that serves
//! it, and the analysis suite that measures its effects.

pub mod analysis;
pub mod experiment;
pub mod guard;
pub mod ingest;
pub mod llm;
pub mod pipeline;

pub use guard::{GateVerdict, ReliabilityTest, TestVerdict};
pub use ingest::{PaperDoc, RawReview, Review, Sections, Scores, SourceKind};
pub use llm::{LlmClient, MockProvider, PromptBundle, TemplateId, TemplateStore};
pub use pipeline::{
    parse_formatted_feedback, render_feedback_items, run_agent, AgentConfig, BundleStatus,
    FeedbackBundle, FeedbackCategory, FeedbackItem, NO_FEEDBACK_SENTINEL,
};
