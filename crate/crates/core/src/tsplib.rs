//! TSPLIB95 reader/writer for `TYPE: TSP` with `EDGE_WEIGHT_TYPE: EUC_2D`.

use std::fmt::Write as _;

use crate::{CoreError, Instance, Point, Result};

fn parse_err(line: usize, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a TSPLIB document. Node `i` in the file becomes index `i - 1`.
pub fn parse_tsplib(text: &str) -> Result<Instance> {
    let mut name = None;
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<String> = None;
    let mut coords: Option<Vec<Option<Point>>> = None;
    let mut in_coords = false;
    let mut coord_section_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let first = line.chars().next().unwrap_or(' ');
            if first.is_ascii_digit() || first == '-' || first == '+' {
                let nodes = coords.as_mut().expect("allocated when the section opened");
                let mut parts = line.split_whitespace();
                let (Some(i), Some(x), Some(y), None) =
                    (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(parse_err(lineno, format!("expected 'index x y', got '{}'", line)));
                };
                let i: usize = i
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad node index '{}'", i)))?;
                let x: f64 = x
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad coordinate '{}'", x)))?;
                let y: f64 = y
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad coordinate '{}'", y)))?;
                if i == 0 || i > nodes.len() {
                    return Err(parse_err(
                        lineno,
                        format!("node index {} outside 1..={}", i, nodes.len()),
                    ));
                }
                if nodes[i - 1].replace(Point::new(x, y)).is_some() {
                    return Err(parse_err(lineno, format!("node {} listed twice", i)));
                }
                continue;
            }
            in_coords = false;
        }

        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        match key {
            "NAME" => name = Some(value.to_string()),
            "TYPE" => {
                if value != "TSP" {
                    return Err(parse_err(lineno, format!("unsupported TYPE '{}'", value)));
                }
            }
            "DIMENSION" => {
                let d = value
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad DIMENSION '{}'", value)))?;
                dimension = Some(d);
            }
            "EDGE_WEIGHT_TYPE" => {
                if value != "EUC_2D" {
                    return Err(parse_err(
                        lineno,
                        format!("unsupported EDGE_WEIGHT_TYPE '{}'", value),
                    ));
                }
                weight_type = Some(value.to_string());
            }
            "NODE_COORD_SECTION" => {
                let d = dimension
                    .ok_or_else(|| parse_err(lineno, "NODE_COORD_SECTION before DIMENSION"))?;
                coords = Some(vec![None; d]);
                in_coords = true;
                coord_section_line = lineno;
            }
            "COMMENT" | "NODE_COORD_TYPE" | "DISPLAY_DATA_TYPE" => {}
            other => {
                return Err(parse_err(lineno, format!("unsupported keyword '{}'", other)));
            }
        }
    }

    let end = text.lines().count();
    if dimension.is_none() {
        return Err(parse_err(end, "missing DIMENSION"));
    }
    if weight_type.is_none() {
        return Err(parse_err(end, "missing EDGE_WEIGHT_TYPE"));
    }
    let nodes = coords.ok_or_else(|| parse_err(end, "missing NODE_COORD_SECTION"))?;
    let found = nodes.iter().filter(|p| p.is_some()).count();
    if found != nodes.len() {
        return Err(parse_err(
            coord_section_line,
            format!("DIMENSION is {} but {} coordinates were given", nodes.len(), found),
        ));
    }
    let coords = nodes.into_iter().map(|p| p.expect("counted above")).collect();
    Ok(Instance::tsp(coords)?.with_name(name))
}

/// Writes a TSP instance in TSPLIB form; coordinates use Rust's shortest
/// round-trip float formatting.
pub fn serialize_tsplib(inst: &Instance) -> Result<String> {
    if inst.is_cvrp() {
        return Err(CoreError::invalid("TSPLIB export supports TSP instances only"));
    }
    let mut out = String::new();
    let name = inst.name().unwrap_or("instance");
    writeln!(out, "NAME : {}", name).expect("writing to a String");
    writeln!(out, "TYPE : TSP").expect("writing to a String");
    writeln!(out, "DIMENSION : {}", inst.n()).expect("writing to a String");
    writeln!(out, "EDGE_WEIGHT_TYPE : EUC_2D").expect("writing to a String");
    writeln!(out, "NODE_COORD_SECTION").expect("writing to a String");
    for (i, p) in inst.coords().iter().enumerate() {
        writeln!(out, "{} {:?} {:?}", i + 1, p.x, p.y).expect("writing to a String");
    }
    writeln!(out, "EOF").expect("writing to a String");
    Ok(out)
}
