//! Documentation checks. The reproduction guide and the symbol concordance
//! are versioned text; this module verifies they still match the CLI so the
//! recipes cannot silently rot.

use std::path::Path;

use crate::{Error, Result};

/// How many recipes the reproduction guide must contain: one per check in
/// the acceptance suite.
pub const RECIPE_COUNT: usize = 8;

/// Symbols the concordance table must map, each to exactly one type or
/// configuration field.
pub const CONCORDANCE_SYMBOLS: [&str; 27] = [
    "Θ", "U", "Φ", "Φˢ", "δ", "δ₀", "δ₁", "δ̃", "η", "σ", "N", "L₁", "L₂", "W₁", "W₂", "L_cut",
    "sil₁", "C_max", "γ_P", "γ_S", "ε_tol", "𝒩_i", "Ω_i", "Γ_soln", "Γ_stab", "λ_k", "K_Φ",
];

/// One reproduction recipe: a command sequence, what it writes, and how close
/// the result must come.
#[derive(Debug, Clone, Default)]
pub struct Recipe {
    pub title: String,
    pub commands: Vec<String>,
    pub artifacts: Vec<String>,
    /// Whether an `Artifacts:` line was present at all ("none" counts).
    pub artifacts_declared: bool,
    pub tolerance: Option<String>,
}

/// Parses the reproduction guide. Recipes start at `## ` headings; command
/// lines live in fenced code blocks; `Artifacts:` and `Tolerance:` lines
/// carry the rest.
pub fn parse_reproduction(text: &str) -> Vec<Recipe> {
    let mut recipes: Vec<Recipe> = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(title) = trimmed.strip_prefix("## ") {
            recipes.push(Recipe { title: title.to_string(), ..Recipe::default() });
            in_fence = false;
            continue;
        }
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        let Some(current) = recipes.last_mut() else { continue };
        if in_fence {
            if !trimmed.is_empty() {
                current.commands.push(trimmed.to_string());
            }
        } else if let Some(rest) = trimmed.strip_prefix("Artifacts:") {
            let rest = rest.trim();
            current.artifacts_declared = true;
            if !rest.eq_ignore_ascii_case("none") {
                current
                    .artifacts
                    .extend(rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
            }
        } else if let Some(rest) = trimmed.strip_prefix("Tolerance:") {
            current.tolerance = Some(rest.trim().to_string());
        }
    }
    recipes
}

/// Maps an artifact file to the subcommand whose contract produces it.
pub fn artifact_producer(path: &str) -> Option<&'static str> {
    let name = path.rsplit('/').next().unwrap_or(path);
    if matches!(name, "complete.jsonl" | "incomplete.jsonl" | "incomplete.removed.json") {
        return Some("gen-data");
    }
    if name == "train-report.csv" || name.ends_with(".losses.csv") {
        return Some("train");
    }
    if (name.contains("-solution-") || name.contains("-stability-")) && name.ends_with(".json") {
        return Some("train");
    }
    if name.starts_with("cut-search-") && name.ends_with(".csv") {
        return Some("cut-search");
    }
    if name == "locate.csv" {
        return Some("locate");
    }
    if name.starts_with("phase-diagram-") && (name.ends_with(".csv") || name.ends_with(".svg")) {
        return Some("phase-diagram");
    }
    if name.starts_with("error-table-") && name.ends_with(".csv") {
        return Some("evaluate");
    }
    if matches!(name, "eigenvalues.csv" | "truncation.csv") {
        return Some("kernel-check");
    }
    if name == "meanshift.csv" {
        return Some("meanshift");
    }
    if name == "sweep.csv" {
        return Some("sweep");
    }
    None
}

fn check_commands(recipe: &Recipe, failures: &mut Vec<String>) {
    use clap::Parser;
    if recipe.commands.is_empty() {
        failures.push(format!("recipe {:?} has no commands", recipe.title));
    }
    for cmd in &recipe.commands {
        if let Some(rest) = cmd.strip_prefix("psnn ") {
            let args = std::iter::once("psnn").chain(rest.split_whitespace());
            if let Err(e) = crate::cli::Cli::try_parse_from(args) {
                failures.push(format!(
                    "recipe {:?}: command {:?} does not parse: {}",
                    recipe.title,
                    cmd,
                    e.to_string().lines().next().unwrap_or_default()
                ));
            }
        } else if !cmd.starts_with("cargo ") && !cmd.starts_with('#') {
            failures.push(format!(
                "recipe {:?}: command {:?} is neither a psnn invocation nor a cargo command",
                recipe.title, cmd
            ));
        }
    }
}

fn check_concordance(text: &str, failures: &mut Vec<String>) {
    let mut counts = vec![0usize; CONCORDANCE_SYMBOLS.len()];
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.starts_with('|') {
            continue;
        }
        let Some(cell) = trimmed.trim_matches('|').split('|').next() else { continue };
        let symbol = cell.trim().trim_matches('`').trim();
        for (i, s) in CONCORDANCE_SYMBOLS.iter().enumerate() {
            if symbol == *s {
                counts[i] += 1;
            }
        }
    }
    for (i, s) in CONCORDANCE_SYMBOLS.iter().enumerate() {
        match counts[i] {
            0 => failures.push(format!("concordance is missing symbol {s}")),
            1 => {}
            n => failures.push(format!("concordance maps symbol {s} {n} times, expected once")),
        }
    }
}

/// Runs every documentation check and returns the failures (empty = pass).
pub fn check_docs(root: &Path) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    let repro_path = root.join("docs").join("reproduction.md");
    let repro = std::fs::read_to_string(&repro_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", repro_path.display())))?;
    let recipes = parse_reproduction(&repro);
    if recipes.len() != RECIPE_COUNT {
        failures.push(format!("expected {RECIPE_COUNT} recipes, found {}", recipes.len()));
    }
    for recipe in &recipes {
        check_commands(recipe, &mut failures);
        if recipe.tolerance.is_none() {
            failures.push(format!("recipe {:?} states no tolerance", recipe.title));
        }
        if !recipe.artifacts_declared {
            failures.push(format!("recipe {:?} declares no artifacts line", recipe.title));
        }
        for artifact in &recipe.artifacts {
            if artifact_producer(artifact).is_none() {
                failures.push(format!(
                    "recipe {:?} names artifact {:?}, which no subcommand produces",
                    recipe.title, artifact
                ));
            }
        }
    }
    let conc_path = root.join("docs").join("concordance.md");
    let conc = std::fs::read_to_string(&conc_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", conc_path.display())))?;
    check_concordance(&conc, &mut failures);
    Ok(failures)
}
