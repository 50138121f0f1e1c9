use std::fmt::Write as _;

use crate::analysis::PitchCurve;
use crate::notes::NoteSequence;

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 30.0;

/// Piano-roll style plot with three layers: reference notes as rectangles,
/// the original curve and the tuned curve. Unvoiced frames are gaps.
pub fn pitch_plot_svg(notes: &NoteSequence, original: &PitchCurve, tuned: &PitchCurve) -> String {
    let frames = original
        .len()
        .max(tuned.len())
        .max(notes.end_frame())
        .max(1);
    let voiced_values = original
        .voiced_values()
        .into_iter()
        .chain(tuned.voiced_values());
    let note_values = notes.notes.iter().map(|n| n.midi as f64);
    let (lo, hi) = voiced_values
        .chain(note_values)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = if lo.is_finite() {
        (lo.floor() - 2.0, hi.ceil() + 2.0)
    } else {
        (57.0, 72.0)
    };
    let x = |t: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * t / frames as f64;
    let y = |m: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (m - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r##"<g id="notes" fill="#cfd8e3" stroke="#8899aa">"##);
    for n in &notes.notes {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
            x(n.onset as f64),
            y(n.midi as f64 + 0.5),
            x(n.offset as f64) - x(n.onset as f64),
            y(n.midi as f64 - 0.5) - y(n.midi as f64 + 0.5)
        );
    }
    let _ = writeln!(svg, "</g>");
    for (id, colour, curve) in [
        ("original", "#999999", original),
        ("tuned", "#d62728", tuned),
    ] {
        let _ = writeln!(
            svg,
            r#"<g id="{id}" fill="none" stroke="{colour}" stroke-width="1.5">"#
        );
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, svg: &mut String| {
            if segment.len() > 1 {
                let _ = writeln!(svg, r#"<polyline points="{}"/>"#, segment.join(" "));
            }
            segment.clear();
        };
        for t in 0..curve.len() {
            if curve.voiced[t] {
                segment.push(format!(
                    "{:.2},{:.2}",
                    x(t as f64 + 0.5),
                    y(curve.f0_midi[t])
                ));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}
