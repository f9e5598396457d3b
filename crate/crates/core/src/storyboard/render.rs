use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Storyboard, StoryboardError};
use crate::ingest::write_atomic;

pub const MANIFEST_FILE: &str = "storyboard.json";
pub const HTML_FILE: &str = "storyboard.html";
pub const MARKDOWN_FILE: &str = "storyboard.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Manifest,
    Html,
    Markdown,
}

impl RenderFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            RenderFormat::Manifest => MANIFEST_FILE,
            RenderFormat::Html => HTML_FILE,
            RenderFormat::Markdown => MARKDOWN_FILE,
        }
    }
}

/// Writes one rendering of `storyboard` into `out_dir` and returns its path.
///
/// Slot image paths are resolved against `media_root`; html and markdown
/// refer to them relative to `out_dir`.
pub fn render(
    storyboard: &Storyboard,
    format: RenderFormat,
    out_dir: &Path,
    media_root: &Path,
) -> Result<PathBuf, StoryboardError> {
    let mut images = Vec::with_capacity(storyboard.slots.len());
    for slot in &storyboard.slots {
        let image = media_root.join(&slot.frame.image_ref);
        if !image.is_file() {
            return Err(StoryboardError::MissingImageFile(image));
        }
        images.push(image);
    }
    std::fs::create_dir_all(out_dir)?;
    let body = match format {
        RenderFormat::Manifest => {
            let mut json = serde_json::to_string_pretty(storyboard).expect("storyboard serializes");
            json.push('\n');
            json
        }
        RenderFormat::Html | RenderFormat::Markdown => {
            let out_abs = std::fs::canonicalize(out_dir)?;
            let mut rel = Vec::with_capacity(images.len());
            for image in &images {
                rel.push(relative_url(&std::fs::canonicalize(image)?, &out_abs));
            }
            if format == RenderFormat::Html {
                html(storyboard, &rel)
            } else {
                markdown(storyboard, &rel)
            }
        }
    };
    let path = out_dir.join(format.file_name());
    write_atomic(&path, body.as_bytes())?;
    Ok(path)
}

fn relative_url(target: &Path, base: &Path) -> String {
    let rel = pathdiff::diff_paths(target, base).unwrap_or_else(|| target.to_path_buf());
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    parts.join("/")
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

fn kind_label(sb: &Storyboard) -> String {
    serde_json::to_value(sb.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn status_label(sb: &Storyboard) -> String {
    serde_json::to_value(sb.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn html(sb: &Storyboard, images: &[String]) -> String {
    let mut out = String::new();
    let title = escape(&sb.id);
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n\
         <style>\n\
         body {{ font-family: sans-serif; margin: 2em; }}\n\
         .slot {{ display: inline-block; vertical-align: top; width: 220px; margin: 0 0.5em; }}\n\
         .slot img {{ max-width: 100%; }}\n\
         .ego {{ display: inline-block; vertical-align: top; width: 120px; font-style: italic; color: #555; }}\n\
         .scores {{ font-family: monospace; font-size: 0.85em; }}\n\
         .warning {{ background: #fee; padding: 0.5em; }}\n\
         </style>\n</head>\n<body>\n<h1>{title}</h1>\n"
    );
    let _ = writeln!(out, "<p class=\"meta\">{} / {}", escape(&kind_label(sb)), escape(&status_label(sb)));
    if let Some(r) = &sb.reference_storyboard_id {
        let _ = write!(out, " / reference {}", escape(r));
    }
    if let Some(v) = &sb.input_video_id {
        let _ = write!(out, " / video {}", escape(v));
    }
    out.push_str("</p>\n");
    if sb.violates_robot_assumption() {
        out.push_str("<p class=\"warning\">Robot motion is taken from the input video and may differ from the reference.</p>\n");
    }
    out.push_str("<div class=\"strip\">\n");
    for (slot, image) in sb.slots.iter().zip(images) {
        let i = slot.slot_index;
        let _ = writeln!(out, "<div class=\"slot\" data-slot=\"{i}\">");
        let _ = writeln!(out, "<img src=\"{}\" alt=\"slot {i}\">", escape(image));
        let _ = writeln!(out, "<p class=\"pose\">{}</p>", escape(&slot.captions.pose_caption));
        let _ = writeln!(out, "<p class=\"context\">{}</p>", escape(&slot.captions.context_caption));
        if let Some(b) = &slot.breakdown {
            let _ = writeln!(
                out,
                "<p class=\"scores\">pose {:.4} context {:.4} weighted {:.4}</p>",
                b.pose_sim, b.context_sim, b.weighted_sim
            );
        }
        out.push_str("</div>\n");
        if let Some(ego) = &slot.ego_motion_to_next {
            let _ = writeln!(out, "<div class=\"ego\">{}</div>", escape(ego));
        }
    }
    out.push_str("</div>\n</body>\n</html>\n");
    out
}

fn markdown(sb: &Storyboard, images: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", sb.id);
    let _ = writeln!(out, "- kind: {}", kind_label(sb));
    let _ = writeln!(out, "- status: {}", status_label(sb));
    if let Some(r) = &sb.reference_storyboard_id {
        let _ = writeln!(out, "- reference: {r}");
    }
    if let Some(v) = &sb.input_video_id {
        let _ = writeln!(out, "- video: {v}");
    }
    if sb.violates_robot_assumption() {
        out.push_str("- robot motion taken from the input video\n");
    }
    for (slot, image) in sb.slots.iter().zip(images) {
        let i = slot.slot_index;
        let _ = writeln!(out, "\n## Slot {i}\n");
        let _ = writeln!(out, "![slot {i}](<{image}>)\n");
        let _ = writeln!(out, "- pose: {}", slot.captions.pose_caption);
        let _ = writeln!(out, "- context: {}", slot.captions.context_caption);
        if let Some(b) = &slot.breakdown {
            let _ = writeln!(
                out,
                "- similarity: pose {:.4}, context {:.4}, weighted {:.4}",
                b.pose_sim, b.context_sim, b.weighted_sim
            );
        }
        if let Some(ego) = &slot.ego_motion_to_next {
            let _ = writeln!(out, "\n> robot: {ego}");
        }
    }
    out
}
