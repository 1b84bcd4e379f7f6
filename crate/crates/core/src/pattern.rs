//! Line-oriented text format for atoms.
//!
//! ```text
//! # comments start with '#'
//! atom cross
//!
//! [nodes]
//! # name role            role: source | relay | destination
//! A source
//! R relay
//!
//! [links]
//! # id kind from to lsp   kind: relay-decode | downlink | overhear
//! # superposed transmitters are joined with '+'
//! uplink relay-decode A+B R 0.8
//!
//! [flows]
//! # id source destination
//! ac A C
//!
//! [slots]
//! # index: entries separated by ';'
//! #   node -> flow        source transmits its flow's current packet
//! #   node -> relay       relay broadcasts what it decoded
//! #   node <- link:rule   reception; rule is 'relay' or flows joined by '+'
//! 1: A -> ac; B -> bd; R <- uplink:ac+bd; C <- b-c:bd; D <- a-d:ac
//! 2: R -> relay; C <- r-c:relay; D <- r-d:relay
//! ```
//!
//! Slots are numbered from 1 and must appear in order. Only ASCII is
//! accepted.

use std::fmt::Write as _;

use thiserror::Error;

use crate::atom::{
    validate_atom, AtomSpec, FlowSpec, ItemRule, LinkKind, LinkSpec, Node, NodeRole, Reception, Slot, Transmission,
    TransmissionPattern, TxItem, Violation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown {what} '{name}'")]
    Unknown { line: usize, what: &'static str, name: String },
    #[error("line {line}: duplicate {what} '{name}'")]
    Duplicate { line: usize, what: &'static str, name: String },
    #[error("pattern has no {0} section")]
    MissingSection(&'static str),
    #[error("pattern is structurally invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Nodes,
    Links,
    Flows,
    Slots,
}

fn syntax(line: usize, msg: impl Into<String>) -> PatternError {
    PatternError::Syntax { line, msg: msg.into() }
}

fn unknown(line: usize, what: &'static str, name: &str) -> PatternError {
    PatternError::Unknown {
        line,
        what,
        name: name.to_string(),
    }
}

/// Parses and validates a pattern document.
pub fn load_pattern(text: &str) -> Result<AtomSpec, PatternError> {
    let atom = parse(text)?;
    validate_atom(&atom).map_err(PatternError::Invalid)?;
    Ok(atom)
}

fn parse(text: &str) -> Result<AtomSpec, PatternError> {
    let mut atom = AtomSpec {
        name: "custom".to_string(),
        nodes: Vec::new(),
        links: Vec::new(),
        flows: Vec::new(),
        pattern: TransmissionPattern::default(),
    };
    let mut section = Section::Header;
    let mut seen = [false; 4];
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        if !raw.is_ascii() {
            return Err(syntax(ln, "non-ASCII character"));
        }
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[nodes]" => Section::Nodes,
                "[links]" => Section::Links,
                "[flows]" => Section::Flows,
                "[slots]" => Section::Slots,
                _ => return Err(syntax(ln, format!("unknown section {line}"))),
            };
            let k = section as usize - 1;
            if seen[k] {
                return Err(syntax(ln, format!("section {line} repeated")));
            }
            seen[k] = true;
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Header => match words.as_slice() {
                ["atom", name] => atom.name = name.to_string(),
                _ => return Err(syntax(ln, "expected 'atom <name>' or a section header")),
            },
            Section::Nodes => {
                let [name, role] = words.as_slice() else {
                    return Err(syntax(ln, "expected '<name> <role>'"));
                };
                let role = NodeRole::parse(role).ok_or_else(|| unknown(ln, "role", role))?;
                if atom.node_index(name).is_some() {
                    return Err(PatternError::Duplicate {
                        line: ln,
                        what: "node",
                        name: name.to_string(),
                    });
                }
                atom.nodes.push(Node {
                    name: name.to_string(),
                    role,
                });
            }
            Section::Links => {
                let [id, kind, from, to, lsp] = words.as_slice() else {
                    return Err(syntax(ln, "expected '<id> <kind> <from> <to> <lsp>'"));
                };
                let kind = LinkKind::parse(kind).ok_or_else(|| unknown(ln, "link kind", kind))?;
                let from = from
                    .split('+')
                    .map(|n| atom.node_index(n).ok_or_else(|| unknown(ln, "node", n)))
                    .collect::<Result<Vec<_>, _>>()?;
                let to = atom.node_index(to).ok_or_else(|| unknown(ln, "node", to))?;
                let lsp: f64 = lsp
                    .parse()
                    .map_err(|_| syntax(ln, format!("bad probability '{lsp}'")))?;
                if atom.link_index(id).is_some() {
                    return Err(PatternError::Duplicate {
                        line: ln,
                        what: "link",
                        name: id.to_string(),
                    });
                }
                atom.links.push(LinkSpec {
                    id: id.to_string(),
                    kind,
                    from,
                    to,
                    lsp,
                });
            }
            Section::Flows => {
                let [id, src, dst] = words.as_slice() else {
                    return Err(syntax(ln, "expected '<id> <source> <destination>'"));
                };
                let source = atom.node_index(src).ok_or_else(|| unknown(ln, "node", src))?;
                let destination = atom.node_index(dst).ok_or_else(|| unknown(ln, "node", dst))?;
                if atom.flow_index(id).is_some() {
                    return Err(PatternError::Duplicate {
                        line: ln,
                        what: "flow",
                        name: id.to_string(),
                    });
                }
                atom.flows.push(FlowSpec {
                    id: id.to_string(),
                    source,
                    destination,
                });
            }
            Section::Slots => {
                let slot = parse_slot(&atom, line, ln)?;
                atom.pattern.slots.push(slot);
            }
        }
    }
    for (k, name) in ["[nodes]", "[links]", "[flows]", "[slots]"].into_iter().enumerate() {
        if !seen[k] {
            return Err(PatternError::MissingSection(name));
        }
    }
    Ok(atom)
}

fn parse_slot(atom: &AtomSpec, line: &str, ln: usize) -> Result<Slot, PatternError> {
    let (idx, body) = line
        .split_once(':')
        .ok_or_else(|| syntax(ln, "expected '<index>: <entries>'"))?;
    let idx: usize = idx
        .trim()
        .parse()
        .map_err(|_| syntax(ln, format!("bad slot index '{}'", idx.trim())))?;
    if idx != atom.pattern.slots.len() + 1 {
        return Err(syntax(
            ln,
            format!("slot {idx} out of order, expected {}", atom.pattern.slots.len() + 1),
        ));
    }
    let mut slot = Slot::default();
    for entry in body.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        if let Some((node, item)) = entry.split_once("->") {
            let (node, item) = (node.trim(), item.trim());
            let n = atom.node_index(node).ok_or_else(|| unknown(ln, "node", node))?;
            let item = if item == "relay" {
                TxItem::RelayBuffer
            } else {
                TxItem::Native(atom.flow_index(item).ok_or_else(|| unknown(ln, "flow", item))?)
            };
            slot.transmissions.push(Transmission { node: n, item });
        } else if let Some((node, rest)) = entry.split_once("<-") {
            let (node, rest) = (node.trim(), rest.trim());
            let n = atom.node_index(node).ok_or_else(|| unknown(ln, "node", node))?;
            let (link, rule) = rest
                .split_once(':')
                .ok_or_else(|| syntax(ln, format!("expected '<link>:<rule>' in '{entry}'")))?;
            let link = atom.link_index(link.trim()).ok_or_else(|| unknown(ln, "link", link.trim()))?;
            let rule = match rule.trim() {
                "relay" => ItemRule::RelayBuffer,
                flows => {
                    let mut fs = flows
                        .split('+')
                        .map(|f| atom.flow_index(f.trim()).ok_or_else(|| unknown(ln, "flow", f.trim())))
                        .collect::<Result<Vec<_>, _>>()?;
                    fs.sort_unstable();
                    let before = fs.len();
                    fs.dedup();
                    if fs.len() != before {
                        return Err(syntax(ln, format!("repeated flow in '{entry}'")));
                    }
                    ItemRule::Xor(fs)
                }
            };
            slot.receptions.push(Reception { receiver: n, link, rule });
        } else {
            return Err(syntax(ln, format!("expected '->' or '<-' in '{entry}'")));
        }
    }
    Ok(slot)
}

/// Renders `atom` in the pattern format. Loading the result gives back an
/// equal atom.
pub fn serialize_pattern(atom: &AtomSpec) -> String {
    let mut out = String::new();
    let name = |i: usize| atom.nodes[i].name.as_str();
    let _ = writeln!(out, "atom {}\n\n[nodes]", atom.name);
    for n in &atom.nodes {
        let _ = writeln!(out, "{} {}", n.name, n.role.as_str());
    }
    out.push_str("\n[links]\n");
    for l in &atom.links {
        let from: Vec<&str> = l.from.iter().map(|&i| name(i)).collect();
        let _ = writeln!(out, "{} {} {} {} {}", l.id, l.kind.as_str(), from.join("+"), name(l.to), l.lsp);
    }
    out.push_str("\n[flows]\n");
    for f in &atom.flows {
        let _ = writeln!(out, "{} {} {}", f.id, name(f.source), name(f.destination));
    }
    out.push_str("\n[slots]\n");
    for (i, s) in atom.pattern.slots.iter().enumerate() {
        let mut entries = Vec::new();
        for t in &s.transmissions {
            let item = match t.item {
                TxItem::Native(f) => atom.flows[f].id.as_str(),
                TxItem::RelayBuffer => "relay",
            };
            entries.push(format!("{} -> {}", name(t.node), item));
        }
        for r in &s.receptions {
            let rule = match &r.rule {
                ItemRule::RelayBuffer => "relay".to_string(),
                ItemRule::Xor(fs) => fs.iter().map(|&f| atom.flows[f].id.as_str()).collect::<Vec<_>>().join("+"),
            };
            entries.push(format!("{} <- {}:{}", name(r.receiver), atom.links[r.link].id, rule));
        }
        let _ = writeln!(out, "{}: {}", i + 1, entries.join("; "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{builtin_cross_atom, builtin_star_atom, CrossLsp};

    const CROSS: &str = "\
atom cross
[nodes]
A source
B source
R relay
C destination
D destination
[links]
uplink relay-decode A+B R 0.9
r-c downlink R C 0.8
r-d downlink R D 0.8
b-c overhear B C 0.7
a-d overhear A D 0.7  # trailing comment
[flows]
ac A C
bd B D
[slots]
1: A -> ac; B -> bd; R <- uplink:ac+bd; C <- b-c:bd; D <- a-d:ac
2: R -> relay; C <- r-c:relay; D <- r-d:relay
";

    #[test]
    fn parses_cross_document() {
        let atom = load_pattern(CROSS).unwrap();
        let builtin = builtin_cross_atom(CrossLsp::from_array([0.9, 0.8, 0.8, 0.7, 0.7])).unwrap();
        assert_eq!(atom, builtin);
    }

    #[test]
    fn builtins_round_trip() {
        for atom in [
            builtin_cross_atom(CrossLsp::homogeneous(0.85, 0.6)).unwrap(),
            builtin_star_atom(0.9).unwrap(),
        ] {
            let text = serialize_pattern(&atom);
            assert_eq!(load_pattern(&text).unwrap(), atom, "{text}");
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = CROSS.replace("r-d downlink R D 0.8", "r-d downlink R Q 0.8");
        assert_eq!(
            load_pattern(&bad),
            Err(PatternError::Unknown {
                line: 11,
                what: "node",
                name: "Q".into()
            })
        );
        let bad = CROSS.replace("2: R", "3: R");
        assert!(matches!(load_pattern(&bad), Err(PatternError::Syntax { line: 19, .. })));
        let bad = CROSS.replace("0.7  #", "seven #");
        assert!(matches!(load_pattern(&bad), Err(PatternError::Syntax { line: 13, .. })));
    }

    #[test]
    fn missing_section() {
        let text = CROSS.split("[slots]").next().unwrap();
        assert_eq!(load_pattern(text), Err(PatternError::MissingSection("[slots]")));
    }

    #[test]
    fn structural_violations_surface() {
        let bad = CROSS.replace("; C <- r-c:relay", "");
        match load_pattern(&bad) {
            Err(PatternError::Invalid(v)) => assert!(v.iter().any(|x| matches!(x, Violation::NotDecodable { .. }))),
            other => panic!("{other:?}"),
        }
    }
}
