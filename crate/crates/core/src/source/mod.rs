//! Attribute bases: the bundled per-dataset table and a chat-model client
//! for discovering new ones.

mod fixture;
mod llm;

pub use fixture::{fixture_bases, fixture_names, fixture_table, AttributeBases, FixtureRow, Provenance};
pub use llm::{
    parse_attribute_list, parse_reply, ChatMessage, ChatRequest, ChatTransport, HttpTransport, LlmClient,
    LlmClientConfig, MockTransport, CACHE_FORMAT_VERSION, DEFAULT_CREDENTIAL_ENV, DESCRIBE_TEMPLATE, REPROMPT_TEMPLATE,
    SUMMARIZE_TEMPLATE,
};
