//! Line-oriented parameter file.
//!
//! ```text
//! # comment
//! [model]
//! n_processes = 2
//! [J]
//! 0   0
//! 0.5 0
//! [t_star]
//! 0 0
//! 2 0
//! [theta]
//! -1 -2
//! [lambda]
//! 1 1.5
//! ```
//!
//! Matrices are one row per line. Vectors may span any number of lines.

use std::path::Path;

use super::fmt_num;
use crate::error::{Error, Result};
use crate::model::ModelParams;

const SECTIONS: [&str; 5] = ["model", "J", "t_star", "theta", "lambda"];

/// Parameter file contents before canonicalization; `lags` keeps entries
/// where `J` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub n_processes: usize,
    pub couplings: Vec<Vec<f64>>,
    pub lags: Vec<Vec<usize>>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl ParamFile {
    pub fn to_params(&self) -> Result<ModelParams> {
        ModelParams::new(
            self.couplings.clone(),
            self.lags.clone(),
            self.theta.clone(),
            self.lambda.clone(),
        )
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct Section {
    header_line: usize,
    /// `(line number, tokens)`
    lines: Vec<(usize, Vec<String>)>,
}

pub fn parse_params(text: &str) -> Result<ParamFile> {
    let mut sections: Vec<(String, Section)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, format!("malformed section header '{content}'")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(parse_err(line_no, format!("unknown section [{name}]")));
            }
            if sections.iter().any(|(n, _)| n == name) {
                return Err(parse_err(line_no, format!("duplicate section [{name}]")));
            }
            sections.push((
                name.to_string(),
                Section {
                    header_line: line_no,
                    lines: Vec::new(),
                },
            ));
            continue;
        }
        let Some((_, section)) = sections.last_mut() else {
            return Err(parse_err(line_no, "content before the first section header"));
        };
        section
            .lines
            .push((line_no, content.split_whitespace().map(str::to_string).collect()));
    }
    let last_line = text.lines().count() + 1;
    let take = |name: &str| -> Result<&Section> {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| parse_err(last_line, format!("missing section [{name}]")))
    };

    let model = take("model")?;
    let mut n_processes = None;
    for (line, tokens) in &model.lines {
        let joined = tokens.join(" ");
        let (key, value) = joined
            .split_once('=')
            .ok_or_else(|| parse_err(*line, format!("expected 'key = value', got '{joined}'")))?;
        match key.trim() {
            "n_processes" => {
                let n: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(*line, format!("n_processes '{}' is not a count", value.trim())))?;
                if n == 0 {
                    return Err(parse_err(*line, "n_processes must be positive"));
                }
                n_processes = Some(n);
            }
            other => return Err(parse_err(*line, format!("unknown model key '{other}'"))),
        }
    }
    let n = n_processes.ok_or_else(|| parse_err(model.header_line, "[model] lacks n_processes"))?;

    let couplings = matrix(take("J")?, "J", n, parse_real)?;
    let lags = matrix(take("t_star")?, "t_star", n, |line, tok| {
        tok.parse::<usize>()
            .map_err(|_| parse_err(line, format!("'{tok}' is not a nonnegative integer lag")))
    })?;
    let theta = vector(take("theta")?, "theta", n)?;
    let lambda = vector(take("lambda")?, "lambda", n)?;
    Ok(ParamFile {
        n_processes: n,
        couplings,
        lags,
        theta,
        lambda,
    })
}

fn parse_real(line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("'{tok}' is not a finite number")))
}

fn matrix<T>(
    section: &Section,
    name: &str,
    n: usize,
    parse: impl Fn(usize, &str) -> Result<T>,
) -> Result<Vec<Vec<T>>> {
    if section.lines.len() != n {
        let line = section.lines.get(n).map_or(section.header_line, |l| l.0);
        return Err(parse_err(
            line,
            format!("dimension mismatch: [{name}] has {} rows, expected {n}", section.lines.len()),
        ));
    }
    section
        .lines
        .iter()
        .enumerate()
        .map(|(r, (line, tokens))| {
            if tokens.len() != n {
                return Err(parse_err(
                    *line,
                    format!(
                        "dimension mismatch: [{name}] row {} has {} entries, expected {n}",
                        r + 1,
                        tokens.len()
                    ),
                ));
            }
            tokens.iter().map(|t| parse(*line, t)).collect()
        })
        .collect()
}

fn vector(section: &Section, name: &str, n: usize) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (line, tokens) in &section.lines {
        for t in tokens {
            values.push(parse_real(*line, t)?);
        }
    }
    if values.len() != n {
        return Err(parse_err(
            section.header_line,
            format!("dimension mismatch: [{name}] has {} entries, expected {n}", values.len()),
        ));
    }
    Ok(values)
}

pub fn format_params(p: &ModelParams) -> String {
    let n = p.n_processes();
    let mut out = format!("[model]\nn_processes = {n}\n\n[J]\n");
    let join = |v: Vec<String>| v.join(" ");
    for row in p.couplings() {
        out += &join(row.iter().map(|&x| fmt_num(x)).collect());
        out.push('\n');
    }
    out += "\n[t_star]\n";
    for row in p.lags() {
        out += &join(row.iter().map(|x| x.to_string()).collect());
        out.push('\n');
    }
    out += "\n[theta]\n";
    out += &join(p.theta().iter().map(|&x| fmt_num(x)).collect());
    out += "\n\n[lambda]\n";
    out += &join(p.noise_rates().iter().map(|&x| fmt_num(x)).collect());
    out.push('\n');
    out
}

pub fn load_params(path: &Path) -> Result<ParamFile> {
    parse_params(&std::fs::read_to_string(path)?)
}

pub fn save_params(path: &Path, p: &ModelParams) -> Result<()> {
    std::fs::write(path, format_params(p))?;
    Ok(())
}
