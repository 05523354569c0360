use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint::DepthSequence;
use crate::error::{Error, Result};

/// Gold tree depths of the complete words of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthAnnotation {
    #[serde(rename = "id")]
    pub sentence_id: String,
    #[serde(rename = "depths")]
    pub word_depths: DepthSequence,
}

/// Depths from a head assignment where `heads[i]` is the 1-based head of word
/// `i + 1` and 0 marks the root. The root has depth 1.
pub fn depths_from_heads(sentence: &str, heads: &[usize]) -> Result<DepthSequence> {
    let n = heads.len();
    if n == 0 {
        return Err(Error::Annotation {
            sentence: sentence.into(),
            message: "no words".into(),
        });
    }
    if let Some((i, &h)) = heads.iter().enumerate().find(|(_, &h)| h > n) {
        return Err(Error::Annotation {
            sentence: sentence.into(),
            message: format!("word {} has head {h} beyond sentence length {n}", i + 1),
        });
    }
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots > 1 {
        return Err(Error::MultipleRoots {
            sentence: sentence.into(),
            count: roots,
        });
    }

    // 0 = unvisited
    let mut depth = vec![0u32; n];
    let mut on_path = vec![false; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start;
        let base = loop {
            if depth[cur] != 0 {
                break depth[cur];
            }
            if on_path[cur] {
                return Err(Error::HeadCycle {
                    sentence: sentence.into(),
                    token: cur + 1,
                });
            }
            on_path[cur] = true;
            path.push(cur);
            match heads[cur] {
                0 => break 0,
                h => cur = h - 1,
            }
        };
        for (k, &node) in path.iter().rev().enumerate() {
            depth[node] = base + k as u32 + 1;
            on_path[node] = false;
        }
    }
    DepthSequence::new(depth).map_err(|e| Error::Annotation {
        sentence: sentence.into(),
        message: e.to_string(),
    })
}

/// Parses CoNLL-U text. Multiword ranges (`3-4`) and empty nodes (`5.1`) are
/// skipped. Sentence ids come from `# sent_id = ...` comments, falling back
/// to the 0-based sentence ordinal.
pub fn parse_conllu_depths<R: BufRead>(reader: R) -> Result<Vec<DepthAnnotation>> {
    let mut out = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut ordinal = 0usize;

    let mut finish = |heads: &mut Vec<usize>, sent_id: &mut Option<String>| -> Result<()> {
        if heads.is_empty() {
            *sent_id = None;
            return Ok(());
        }
        let id = sent_id.take().unwrap_or_else(|| ordinal.to_string());
        ordinal += 1;
        let depths = depths_from_heads(&id, heads)?;
        heads.clear();
        out.push(DepthAnnotation {
            sentence_id: id,
            word_depths: depths,
        });
        Ok(())
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut heads, &mut sent_id)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("sent_id") {
                let v = v.trim_start().trim_start_matches('=').trim();
                sent_id = Some(v.to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 7 {
            return Err(Error::Format {
                offset: lineno as u64 + 1,
                message: format!("line has {} columns, expected 10", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| Error::Format {
            offset: lineno as u64 + 1,
            message: format!("bad token id {:?}", cols[0]),
        })?;
        if id != heads.len() + 1 {
            return Err(Error::Format {
                offset: lineno as u64 + 1,
                message: format!("token id {id} out of sequence"),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Format {
            offset: lineno as u64 + 1,
            message: format!("bad head {:?}", cols[6]),
        })?;
        heads.push(head);
    }
    finish(&mut heads, &mut sent_id)?;
    Ok(out)
}

pub fn read_conllu_depths(path: impl AsRef<Path>) -> Result<Vec<DepthAnnotation>> {
    parse_conllu_depths(BufReader::new(File::open(path)?))
}

/// Parses JSON lines of the form `{"id": "...", "depths": [1, 2, 2]}`.
pub fn parse_jsonl_depths<R: BufRead>(reader: R) -> Result<Vec<DepthAnnotation>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: DepthAnnotation = serde_json::from_str(&line).map_err(|e| Error::Format {
            offset: lineno as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(ann);
    }
    Ok(out)
}

pub fn read_jsonl_depths(path: impl AsRef<Path>) -> Result<Vec<DepthAnnotation>> {
    parse_jsonl_depths(BufReader::new(File::open(path)?))
}

pub fn write_jsonl_depths<W: Write>(mut w: W, annotations: &[DepthAnnotation]) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads annotations, choosing the parser by extension: `.jsonl` / `.json`
/// are JSON lines, anything else is treated as CoNLL-U.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<DepthAnnotation>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => read_jsonl_depths(path),
        _ => read_conllu_depths(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depths(heads: &[usize]) -> Vec<u32> {
        depths_from_heads("t", heads).unwrap().into_inner()
    }

    #[test]
    fn head_examples() {
        assert_eq!(depths(&[0]), vec![1]);
        assert_eq!(depths(&[0, 1, 2]), vec![1, 2, 3]);
        assert_eq!(depths(&[0, 1, 1, 1]), vec![1, 2, 2, 2]);
        assert_eq!(depths(&[2, 0, 2, 3]), vec![2, 1, 2, 3]);
    }

    #[test]
    fn head_errors() {
        assert!(matches!(
            depths_from_heads("c", &[2, 1]),
            Err(Error::HeadCycle { .. })
        ));
        assert!(matches!(
            depths_from_heads("c", &[0, 3, 2]),
            Err(Error::HeadCycle { .. })
        ));
        assert!(matches!(
            depths_from_heads("r", &[0, 0]),
            Err(Error::MultipleRoots { count: 2, .. })
        ));
        assert!(matches!(
            depths_from_heads("o", &[0, 5]),
            Err(Error::Annotation { .. })
        ));
    }

    #[test]
    fn conllu_parsing() {
        let text = "\
# sent_id = first
# text = They play ball
1\tThey\tthey\tPRON\t_\t_\t2\tnsubj\t_\t_
2\tplay\tplay\tVERB\t_\t_\t0\troot\t_\t_
3\tball\tball\tNOUN\t_\t_\t2\tobj\t_\t_

1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_
1\tdo\tdo\tAUX\t_\t_\t3\taux\t_\t_
2\tn't\tnot\tPART\t_\t_\t3\tadvmod\t_\t_
2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_
3\tgo\tgo\tVERB\t_\t_\t0\troot\t_\t_
";
        let anns = parse_conllu_depths(text.as_bytes()).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[0].sentence_id, "first");
        assert_eq!(anns[0].word_depths.as_slice(), &[2, 1, 2]);
        assert_eq!(anns[1].sentence_id, "1");
        assert_eq!(anns[1].word_depths.as_slice(), &[2, 2, 1]);
    }

    #[test]
    fn conllu_bad_lines() {
        assert!(parse_conllu_depths("1\ta\tb\n".as_bytes()).is_err());
        assert!(parse_conllu_depths("2\ta\ta\tX\t_\t_\t0\troot\t_\t_\n".as_bytes()).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let anns = vec![DepthAnnotation {
            sentence_id: "x".into(),
            word_depths: DepthSequence::new(vec![2, 1, 3, 2]).unwrap(),
        }];
        let mut buf = Vec::new();
        write_jsonl_depths(&mut buf, &anns).unwrap();
        assert_eq!(
            String::from_utf8_lossy(&buf),
            "{\"id\":\"x\",\"depths\":[2,1,3,2]}\n"
        );
        assert_eq!(parse_jsonl_depths(buf.as_slice()).unwrap(), anns);
        assert!(parse_jsonl_depths("{\"id\":\"y\",\"depths\":[1,1]}".as_bytes()).is_err());
    }
}
