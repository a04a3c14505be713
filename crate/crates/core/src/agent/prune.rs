use super::message::{Message, Part, Role};

pub const DEFAULT_IMAGE_TOKENS: u64 = 1024;

/// Keeps image payloads only in the most recent tool message that carries
/// any; every older payload becomes a metadata stub. Non-tool messages are
/// left untouched.
pub fn prune_images(mut messages: Vec<Message>) -> Vec<Message> {
    prune_images_in_place(&mut messages);
    messages
}

pub fn prune_images_in_place(messages: &mut [Message]) {
    let keep = messages
        .iter()
        .rposition(|m| m.role == Role::Tool && m.inline_image_count() > 0);
    let Some(keep) = keep else {
        return;
    };
    for (i, m) in messages.iter_mut().enumerate() {
        if i == keep || m.role != Role::Tool || m.inline_image_count() == 0 {
            continue;
        }
        for part in &mut m.content {
            match part {
                Part::Image(img) => {
                    img.content = img.content.to_stub(&img.location);
                }
                Part::ToolResult(r) => *r = r.stubbed(),
                _ => {}
            }
        }
    }
}

/// `ceil(chars / 4)` over all textual content plus a fixed cost per inline
/// image payload. Stubs count as text.
pub fn estimate_tokens(message: &Message) -> u64 {
    estimate_tokens_with(message, DEFAULT_IMAGE_TOKENS)
}

pub fn estimate_tokens_with(message: &Message, per_image: u64) -> u64 {
    let images = message.inline_image_count() as u64;
    let chars = textual_chars(message) as u64;
    chars.div_ceil(4) + images * per_image
}

fn textual_chars(message: &Message) -> usize {
    use super::message::ImageContent;
    message
        .content
        .iter()
        .map(|p| match p {
            Part::Text(t) => t.chars().count(),
            Part::Image(i) => match &i.content {
                ImageContent::Inline { .. } => 0,
                ImageContent::Stub { text, .. } => text.chars().count(),
            },
            Part::ToolCall(c) => {
                c.tool_name.chars().count() + serde_json::Value::Object(c.arguments.clone()).to_string().chars().count()
            }
            Part::ToolResult(r) => {
                let mut n = r.error.as_ref().map_or(0, |e| e.chars().count());
                for c in &r.chunks {
                    n += c.location.chars().count() + c.text.chars().count();
                    if let Some(ImageContent::Stub { text, .. }) = &c.image {
                        n += text.chars().count();
                    }
                }
                if let Some(o) = &r.output {
                    n += o.to_string().chars().count();
                }
                n + r.artifacts.iter().map(|a| a.chars().count()).sum::<usize>()
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::super::message::{ImageContent, ImagePart};
    use super::*;

    fn img(n: u8) -> Part {
        Part::Image(ImagePart {
            location: format!("S!A{n}"),
            content: ImageContent::Inline {
                image_id: format!("i{n}"),
                encoding: "image/png".into(),
                alt_text: "chart".into(),
                payload: vec![n; 8],
            },
        })
    }

    #[test]
    fn token_examples() {
        assert_eq!(estimate_tokens(&Message::new(Role::User, vec![])), 0);
        assert_eq!(estimate_tokens(&Message::user("x".repeat(400))), 100);
        assert_eq!(estimate_tokens(&Message::user("x".repeat(401))), 101);
        let m = Message::new(Role::Tool, vec![Part::Text("y".repeat(100)), img(1), img(2)]);
        assert_eq!(estimate_tokens(&m), 25 + 2048);
    }

    #[test]
    fn only_latest_image_message_keeps_payloads() {
        let h = vec![
            Message::user("q"),
            Message::new(Role::Tool, vec![img(1)]),
            Message::assistant_text("thinking about the chart"),
            Message::new(Role::Tool, vec![Part::Text("none".into())]),
            Message::new(Role::Tool, vec![img(2), img(3)]),
        ];
        let p = prune_images(h.clone());
        assert_eq!(p[1].inline_image_count(), 0);
        assert_eq!(p[4].inline_image_count(), 2);
        assert_eq!(p[2], h[2]);
        assert!(p[1].render().contains("S!A1"));
        assert_eq!(prune_images(p.clone()), p);
    }

    #[test]
    fn image_free_history_is_identity() {
        let h = vec![Message::user("q"), Message::assistant_text("a")];
        assert_eq!(prune_images(h.clone()), h);
    }
}
