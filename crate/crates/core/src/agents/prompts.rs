//! Prompt templates for the simulated user and the assistants.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::model::{ArmLabel, Conversation, Domain, Role, Turn, UserProfile};

/// System prompt for the judgement task (ranking four transcripts).
pub const JUDGEMENT_TEMPLATE: &str = r#"**Role:** You're a participant involved in an AI models evaluation task.
Here's your task:

**Dialogs Evaluation**
  - You have some personal **demographics background** and personal
    preferences on AI assistants, which are encoded in the provided
    **"system_string"**
  - You will be provided with some conversation records between you and
    4 AI assistants. From them, you need to **rank all 4 AI assistants**
    from best to worst based on how well each conversation aligns with
    your personal preferences.
  - Your final evaluation should be a ranking in the format:
    '[[1st, 2nd, 3rd, 4th]]' where you fill in the assistant letters
    (A/B/C/D). For example: '[[B, D, A, C]]' means B is best, D is
    second, A is third, C is worst. Always make sure your final
    evaluation is enclosed by double square brackets '[[ ]]'.
  - Base your ranking **solely on personal preference**, especially
    **"system_string"**, considering things like tone, content, and how
    well it matches your tastes throughout the entire conversation. Your
    ranking should not be biased by the order of the AI assistants.
  - Provide a **comprehensive explanation** (6-8 sentences) for your
    ranking. Explain why your top choice is the best, and briefly
    justify the relative ordering of the others.

**Input Format:**
- For evaluation input:

### Complete Chat History with Assistant A: {complete_chat_history_A}
### Complete Chat History with Assistant B: {complete_chat_history_B}
### Complete Chat History with Assistant C: {complete_chat_history_C}
### Complete Chat History with Assistant D: {complete_chat_history_D}

Now give me your final ranking and your explanation.

-> Rank all AI assistants based on the entire conversation history and
   your personal preference.

Now start your task, this time you are a participant with the following
**"demographics background"** information:
<user_profile>
Here's the **"system_string"** which reflects your preference for AI
models. Be sure to make your response and selection based on it:
<system_string>

**Note: If there are unfinished assistant response, they are truncated
due to token limit. You should tolerant to that and feel safe to ignore
the unfinished sentence in your judgement.**"#;

/// System prompt for the conversation task.
pub const CONVERSATION_TEMPLATE: &str = r#"**Role:** You're a participant involved in an AI models evaluation task.
Here's your task:
**Chat with AI assistants:**
   - You will be required to chat with four AI assistants interactively.
   - Chat naturally while reflecting your **personal traits/preferences**.
   Your personal traits/preferences are involved in your **"demographics background"**
   and **"system string"**
   - Keep responses <= 50 words, casual tone.
   - You will be provided a specific topic,
   your open message to the AI assistant should be related to the provided topic.
   - Never reveal you're an AI.
**Input Format:**
- For chat inputs:
```
### Chat History: {chat_history}
Now give me your response.
```
→ You should directly reply to the last message in the chat history
while not repeating anything in the input format.
**Examples:**
- Input:
```
### Chat History:
User: Hi, what's your favorite type of music?
AI Assistant: I enjoy classical music the most. The complexity and emotional depth of
composers like Mozart and Beethoven is unmatched. What about you?

Now give me your response.
```
- Your demographics background:
```
..., self_description: I love rock and indie., ...
```
- Output (Your part):
```
### Your Response: I'm more into rock and indie. Do you have
any movie recommendations for this weekend?
```

Now start your task, this time you are a participant with the
following **"demographics background"** information:
<user_profile>
Here's the **"system_string"** which reflects your preference
for AI models. Be sure to make your response and selection based on it:
<system_string>

The topic for this conversation is:
<topic_name>. <chat_instruction>

Please remember in your opening message to ask, request or
talk to the model about something specific related to this topic.
Please do not just write an opening message that says "hello" or greets the model."#;

/// Default assistant system prompt.
pub const BASIC_SYSTEM_PROMPT: &str = "You are a conversational assistant. Your goal is to engage in conversations. \
The conversation history is in the input.\nReply to the last user message. **Limit your answer to around 50 words. \
Do not refer to your word limit.**";

pub const JUDGE_REQUEST: &str = "Now give me your final ranking and your explanation.";
pub const CHAT_REQUEST: &str = "Now give me your response.";
pub const REASK_SUFFIX: &str = "reply with only the bracketed ranking";
pub const RESPONSE_PREFIX: &str = "### Your Response:";

/// Default per-arm transcript budget for the judge, in whitespace tokens.
pub const DEFAULT_TRANSCRIPT_TOKENS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Judgement,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

/// The `<user_profile>` slot: demographics followed by the self description.
pub fn profile_text(profile: &UserProfile) -> String {
    match (profile.demographics.trim(), profile.self_description.trim()) {
        ("", "") => String::new(),
        (d, "") => d.to_string(),
        ("", s) => format!("self_description: {s}"),
        (d, s) => format!("{d}, self_description: {s}"),
    }
}

fn fill_persona(template: &str, profile: &UserProfile) -> String {
    template.replace("<user_profile>", &profile_text(profile)).replace("<system_string>", &profile.system_string)
}

/// Renders turns as `User: ...` / `AI Assistant: ...` lines.
pub fn render_history(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| match t.role {
            Role::User => format!("User: {}", t.text),
            Role::Assistant => format!("AI Assistant: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keeps the first `max_tokens` whitespace-separated tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let mut out = String::new();
    for (i, tok) in text.split_whitespace().enumerate() {
        if i == max_tokens {
            break;
        }
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    if text.split_whitespace().nth(max_tokens).is_none() {
        return text.to_string();
    }
    out
}

/// Four transcripts in display-position order, each under its label.
pub fn judgement_blocks(arms: &[Conversation], max_tokens: usize) -> Result<String, AgentError> {
    let labels: std::collections::BTreeSet<ArmLabel> = arms.iter().map(|a| a.label).collect();
    if arms.len() != 4 || labels.len() != 4 {
        return Err(AgentError::MissingTranscripts(arms.len()));
    }
    let mut ordered: Vec<&Conversation> = arms.iter().collect();
    ordered.sort_by_key(|a| (a.position, a.label));
    Ok(ordered
        .iter()
        .map(|a| {
            format!(
                "### Complete Chat History with Assistant {}: {}",
                a.label,
                truncate_tokens(&render_history(&a.turns), max_tokens)
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Renders the simulated user's system and user messages.
///
/// `Judgement` requires all four transcripts. `Dynamic` fills the topic
/// slots; an `opening_seed` is quoted so the simulated user continues from
/// the human's opening prompt. The dynamic user message holds the chat
/// history so far (empty for the opening).
pub fn render_user_prompt(
    profile: &UserProfile,
    kind: PromptKind,
    domain: Domain,
    transcripts: Option<&[Conversation]>,
    opening_seed: Option<&str>,
    history: &[Turn],
    max_transcript_tokens: usize,
) -> Result<RenderedPrompt, AgentError> {
    match kind {
        PromptKind::Judgement => {
            let arms = transcripts.ok_or(AgentError::MissingTranscripts(0))?;
            let blocks = judgement_blocks(arms, max_transcript_tokens)?;
            Ok(RenderedPrompt {
                system: fill_persona(JUDGEMENT_TEMPLATE, profile),
                user: format!("{blocks}\n\n{JUDGE_REQUEST}"),
            })
        }
        PromptKind::Dynamic => {
            let mut system = fill_persona(CONVERSATION_TEMPLATE, profile)
                .replace("<topic_name>", domain.topic_name())
                .replace("<chat_instruction>", domain.instruction());
            if let Some(seed) = opening_seed {
                system.push_str(&format!("\n\nYour opening message for this conversation is:\n{seed}"));
            }
            Ok(RenderedPrompt { system, user: format!("### Chat History: {}\n{CHAT_REQUEST}", render_history(history)) })
        }
    }
}

/// Strips the `### Your Response:` prefix a simulated user may echo.
pub fn clean_user_reply(text: &str) -> String {
    let t = text.trim();
    t.strip_prefix(RESPONSE_PREFIX).unwrap_or(t).trim().to_string()
}
