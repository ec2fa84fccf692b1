use super::segment::{Role, Segment, Turn};
use crate::error::{OmniError, Result};
use crate::vocab::{VocabLayout, THINK_CLOSE, THINK_OPEN, TURN_END, TURN_START};

fn check_order(turns: &[Turn]) -> Result<()> {
    let mut prev: Option<Role> = None;
    for (i, t) in turns.iter().enumerate() {
        if t.role == Role::System && i != 0 {
            return Err(OmniError::InvalidArgument(format!("system turn at position {i}")));
        }
        if prev == Some(t.role) {
            return Err(OmniError::InvalidArgument(format!(
                "two consecutive {} turns at position {i}",
                t.role
            )));
        }
        if t.think.is_some() && t.role != Role::Assistant {
            return Err(OmniError::InvalidArgument(format!(
                "think block on a {} turn",
                t.role
            )));
        }
        prev = Some(t.role);
    }
    Ok(())
}

/// Chat templating: every turn becomes `turn-start, role, [think-open …
/// think-close], segments…, turn-end`. Modality segments are wrapped with
/// their start/end tokens later, at assembly.
pub fn render_template(turns: &[Turn], layout: &VocabLayout) -> Result<Vec<Segment>> {
    check_order(turns)?;
    let start = layout.special(TURN_START)?;
    let end = layout.special(TURN_END)?;
    let mut out = Vec::new();
    for t in turns {
        let mut head = vec![start, layout.special(t.role.name())?];
        if let Some(think) = &t.think {
            head.push(layout.special(THINK_OPEN)?);
            head.extend_from_slice(think);
            head.push(layout.special(THINK_CLOSE)?);
        }
        out.push(Segment::text(head).with_role(t.role));
        for s in &t.segments {
            out.push(s.clone().with_role(t.role));
        }
        out.push(Segment::text(vec![end]).with_role(t.role));
    }
    Ok(out)
}

/// Template followed by an open assistant turn for generation.
pub fn generation_prompt(turns: &[Turn], layout: &VocabLayout) -> Result<Vec<Segment>> {
    let mut out = render_template(turns, layout)?;
    out.push(
        Segment::text(vec![layout.special(TURN_START)?, layout.special(Role::Assistant.name())?])
            .with_role(Role::Assistant),
    );
    Ok(out)
}
