//! Render one generated puzzle as ASCII art and explain its rules.
//!
//! Usage: cargo run --example inspect_puzzle [-- SEED]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dircr::puzzle::{generate_puzzle, Puzzle, PuzzleConfig, RuleKind};

const RAMP: &[u8] = b"@%#*+=-:. ";

fn ascii_panel(img: &[u8], size: usize) -> Vec<String> {
    // Downsample to at most 16 character rows so panels fit side by side.
    let block = size.div_ceil(16);
    let mut rows = Vec::new();
    for y in (0..size).step_by(block) {
        let mut line = String::new();
        for x in (0..size).step_by(block) {
            let mut sum = 0u32;
            let mut n = 0u32;
            for dy in 0..block.min(size - y) {
                for dx in 0..block.min(size - x) {
                    sum += img[(y + dy) * size + (x + dx)] as u32;
                    n += 1;
                }
            }
            let v = (sum / n) as usize * (RAMP.len() - 1) / 255;
            line.push(RAMP[v] as char);
        }
        rows.push(line);
    }
    rows
}

fn print_grid(panels: &[&[u8]], labels: &[String], size: usize) {
    for chunk in panels.chunks(4).zip(labels.chunks(4)) {
        let (imgs, labs) = chunk;
        let rendered: Vec<Vec<String>> = imgs.iter().map(|p| ascii_panel(p, size)).collect();
        let mut header = String::new();
        for (lab, r) in labs.iter().zip(&rendered) {
            header.push_str(&format!("{:<width$}  ", lab, width = r[0].len()));
        }
        println!("{header}");
        for row in 0..rendered[0].len() {
            let mut line = String::new();
            for r in &rendered {
                line.push_str(&r[row]);
                line.push_str("  ");
            }
            println!("{line}");
        }
        println!();
    }
}

fn describe(p: &Puzzle) {
    for r in &p.rules {
        let detail = match r.kind {
            RuleKind::Constant => "constant".to_string(),
            RuleKind::Progression { step } => format!("progression (step {step:+})"),
            RuleKind::Arithmetic { sign } => {
                format!("arithmetic (v3 = v1 {} v2)", if sign >= 0 { "+" } else { "-" })
            }
            RuleKind::DistributeThree { triple } => {
                format!("distribute_three (triple {:?})", triple)
            }
        };
        println!("rule on {:?}: {detail}", r.attribute);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(42);
    let cfg = PuzzleConfig { image_size: 48, ..PuzzleConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = generate_puzzle(&mut rng, &cfg)?;

    println!("puzzle seed {seed}, {0}x{0} px", p.image_size);
    describe(&p);
    println!("answer: A{} (index {})\n", p.answer_index + 1, p.answer_index);

    let size = p.image_size as usize;
    let ctx: Vec<&[u8]> = p.context.iter().map(|v| v.as_slice()).collect();
    let ctx_labels: Vec<String> = (1..=8).map(|i| format!("Q{i}")).collect();
    print_grid(&ctx, &ctx_labels, size);

    let cands: Vec<&[u8]> = p.candidates.iter().map(|v| v.as_slice()).collect();
    let cand_labels: Vec<String> = (0..8)
        .map(|i| {
            let mark = if i == p.answer_index as usize { "*" } else { "" };
            format!("A{}{mark}", i + 1)
        })
        .collect();
    print_grid(&cands, &cand_labels, size);
    Ok(())
}
