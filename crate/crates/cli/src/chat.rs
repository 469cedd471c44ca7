//! Line-based chat with a trained policy.

use std::io::{BufRead, Write};

use anyhow::Result;
use s2srl::eval::{check_termination, TerminationRule};
use s2srl::model::beam_search;
use s2srl::{DialogueState, ModelParams, RewardModel, Utterance, Vocab};

pub struct ChatOptions<'a> {
    pub beam_width: usize,
    pub max_decode_len: usize,
    pub rule: &'a TerminationRule,
    /// Scores each reply when set.
    pub rewards: Option<RewardModel<'a>>,
    /// Repeat each input line after the prompt, so piped sessions read as
    /// transcripts.
    pub echo: bool,
}

/// Runs until end of input or `/quit`. User lines are shown after `> `,
/// replies after `< `. A blank line re-prompts without touching the state.
/// When the termination rule fires, the dialogue restarts from scratch.
pub fn chat_repl(
    params: &ModelParams,
    vocab: &Vocab,
    opts: &ChatOptions<'_>,
    input: impl BufRead,
    out: &mut impl Write,
) -> Result<()> {
    let mut history: Vec<Utterance> = Vec::new();
    let mut last_reply: Option<Utterance> = None;
    let mut lines = input.lines();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let Some(line) = lines.next() else {
            writeln!(out)?;
            return Ok(());
        };
        let line = line?;
        let text = line.trim();
        if opts.echo {
            writeln!(out, "{text}")?;
        }
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            return Ok(());
        }
        let user = match vocab.encode(text) {
            Ok(u) => u,
            Err(_) => {
                writeln!(out, "# nothing to say to that")?;
                continue;
            }
        };
        let state = DialogueState::new(last_reply.clone(), user.clone());
        history.push(user);
        let hyps = beam_search(params, &state.source(), opts.beam_width, opts.max_decode_len)?;
        let reply = hyps.into_iter().next().map(|h| h.utterance).expect("beam search returns a hypothesis");
        writeln!(out, "< {}", vocab.decode(&reply))?;
        if let Some(rm) = &opts.rewards {
            let r = rm.score(&reply, &state, last_reply.as_ref())?;
            writeln!(out, "# r1={:.4} r2={:.4} r3={:.4} total={:.4}", r.r1, r.r2, r.r3, r.total)?;
        }
        history.push(reply.clone());
        last_reply = Some(reply);
        if let Some(cause) = check_termination(&history, opts.rule) {
            writeln!(out, "# dialogue ended: {}", cause.as_str())?;
            history.clear();
            last_reply = None;
        }
    }
}
