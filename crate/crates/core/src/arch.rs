//! Architecture strings like `1x28x28-20C5-2P2-40C5-2P2-1000N-10N`:
//! input size, conv layers (`<maps>C<filter>`), pooling layers
//! (`<region>P<stride>`), then one or more dense layers (`<units>N`).

use crate::error::{Error, Result};

pub const MNIST_ARCH: &str = "1x28x28-20C5-2P2-40C5-2P2-1000N-10N";
pub const CIFAR10_ARCH: &str = "3x32x32-96C5-3P2-128C3-3P2-256C3-3P2-2000N-2000N-10N";
pub const CIFAR100_ARCH: &str = "3x32x32-96C5-3P2-128C3-3P2-256C3-3P2-2000N-2000N-100N";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchToken {
    Input { channels: usize, height: usize, width: usize },
    Conv { maps: usize, filter: usize },
    Pool { region: usize, stride: usize },
    Dense { units: usize },
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat { units: usize },
}

#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub tokens: Vec<ArchToken>,
    /// `shapes[0]` is the input shape; `shapes[i+1]` follows `tokens[i+1]`.
    pub shapes: Vec<Shape>,
    source: String,
}

impl ArchSpec {
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of output classes (units of the last dense layer).
    pub fn n_classes(&self) -> usize {
        match self.tokens.last() {
            Some(ArchToken::Dense { units }) => *units,
            _ => unreachable!("parse guarantees a trailing dense layer"),
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.shapes[0] {
            Shape::Spatial { channels, height, width } => (channels, height, width),
            Shape::Flat { .. } => unreachable!("input is always spatial"),
        }
    }
}

/// Resolves a preset name or parses a raw architecture string.
pub fn resolve_arch(name_or_string: &str) -> Result<ArchSpec> {
    match name_or_string {
        "mnist" => parse_arch(MNIST_ARCH),
        "cifar10" => parse_arch(CIFAR10_ARCH),
        "cifar100" => parse_arch(CIFAR100_ARCH),
        other => parse_arch(other),
    }
}

pub fn parse_arch(arch: &str) -> Result<ArchSpec> {
    let parts: Vec<&str> = arch.split('-').collect();
    if parts.len() < 2 {
        return Err(parse_err(arch, "expected `<C>x<H>x<W>-...-<units>N`"));
    }

    let mut tokens = Vec::with_capacity(parts.len());
    tokens.push(parse_input(parts[0])?);
    let mut seen_dense = false;
    for tok in &parts[1..] {
        let parsed = parse_token(tok)?;
        match parsed {
            ArchToken::Dense { .. } => seen_dense = true,
            _ if seen_dense => {
                return Err(parse_err(tok, "conv/pool layers cannot follow dense layers"));
            }
            _ => {}
        }
        tokens.push(parsed);
    }
    if !seen_dense {
        return Err(parse_err(arch, "at least one dense (`<units>N`) layer is required"));
    }

    let shapes = shape_chain(&tokens, arch)?;
    Ok(ArchSpec {
        tokens,
        shapes,
        source: arch.to_string(),
    })
}

fn shape_chain(tokens: &[ArchToken], arch: &str) -> Result<Vec<Shape>> {
    let mut shapes = Vec::with_capacity(tokens.len());
    let (mut c, mut h, mut w) = match tokens[0] {
        ArchToken::Input { channels, height, width } => (channels, height, width),
        _ => unreachable!(),
    };
    shapes.push(Shape::Spatial { channels: c, height: h, width: w });

    for tok in &tokens[1..] {
        match *tok {
            ArchToken::Input { .. } => {
                return Err(parse_err(arch, "input token may appear only once, first"));
            }
            ArchToken::Conv { maps, filter } => {
                if filter > h || filter > w {
                    return Err(parse_err(
                        &format!("{maps}C{filter}"),
                        &format!("filter {filter} exceeds input {h}x{w}"),
                    ));
                }
                c = maps;
                h = h - filter + 1;
                w = w - filter + 1;
                shapes.push(Shape::Spatial { channels: c, height: h, width: w });
            }
            ArchToken::Pool { region, stride } => {
                if region > h || region > w {
                    return Err(parse_err(
                        &format!("{region}P{stride}"),
                        &format!("pooling region {region} exceeds input {h}x{w}"),
                    ));
                }
                h = (h - region) / stride + 1;
                w = (w - region) / stride + 1;
                shapes.push(Shape::Spatial { channels: c, height: h, width: w });
            }
            ArchToken::Dense { units } => {
                shapes.push(Shape::Flat { units });
            }
        }
    }
    Ok(shapes)
}

fn parse_input(tok: &str) -> Result<ArchToken> {
    let dims: Vec<&str> = tok.split('x').collect();
    if dims.len() != 3 {
        return Err(parse_err(tok, "input must be `<C>x<H>x<W>`"));
    }
    let mut vals = [0usize; 3];
    for (i, d) in dims.iter().enumerate() {
        vals[i] = parse_positive(tok, d)?;
    }
    Ok(ArchToken::Input {
        channels: vals[0],
        height: vals[1],
        width: vals[2],
    })
}

fn parse_token(tok: &str) -> Result<ArchToken> {
    if let Some((maps, filter)) = tok.split_once('C') {
        return Ok(ArchToken::Conv {
            maps: parse_positive(tok, maps)?,
            filter: parse_positive(tok, filter)?,
        });
    }
    if let Some((region, stride)) = tok.split_once('P') {
        return Ok(ArchToken::Pool {
            region: parse_positive(tok, region)?,
            stride: parse_positive(tok, stride)?,
        });
    }
    if let Some(units) = tok.strip_suffix('N') {
        return Ok(ArchToken::Dense {
            units: parse_positive(tok, units)?,
        });
    }
    Err(parse_err(tok, "expected `<k>C<f>`, `<t>P<s>` or `<u>N`"))
}

fn parse_positive(tok: &str, field: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| parse_err(tok, &format!("`{field}` is not a positive integer")))
}

fn parse_err(token: &str, msg: &str) -> Error {
    Error::Parse {
        token: token.to_string(),
        msg: msg.to_string(),
    }
}
