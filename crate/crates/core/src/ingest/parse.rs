use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{align_span, tokenize, IngestError, Polarity, TextInstance};

pub const TOKENIZER_DESCRIPTION: &str = "lowercase; split on whitespace; each punctuation character is a token";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    SemevalXml,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension: `.xml` is SemEval, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("xml") => CorpusFormat::SemevalXml,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semeval-xml" | "xml" => Ok(CorpusFormat::SemevalXml),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

/// What was filtered out while parsing, and how text was tokenized.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub sentences: usize,
    pub kept: usize,
    pub conflict: usize,
    pub unalignable: usize,
    /// Opinions without an explicit target (`target="NULL"`).
    pub implicit_target: usize,
    /// Repeated (span, polarity) opinions within one sentence.
    pub duplicate: usize,
    pub tokenizer: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub instances: Vec<TextInstance>,
    pub report: DropReport,
}

pub fn parse_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let origin = path.display().to_string();
    match format {
        CorpusFormat::SemevalXml => parse_semeval_xml_str(&text, &origin),
        CorpusFormat::Jsonl => parse_jsonl_str(&text, &origin),
    }
}

struct Span {
    from: usize,
    to: usize,
    label: Option<Polarity>,
}

struct Builder {
    corpus: Corpus,
}

impl Builder {
    fn new() -> Self {
        Self {
            corpus: Corpus {
                instances: Vec::new(),
                report: DropReport {
                    tokenizer: TOKENIZER_DESCRIPTION.to_string(),
                    ..DropReport::default()
                },
            },
        }
    }

    /// `label == None` marks a conflict annotation.
    fn sentence(&mut self, text: &str, spans: Vec<Span>) {
        self.corpus.report.sentences += 1;
        let tokens = tokenize(text);
        let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        for span in spans {
            let Some(label) = span.label else {
                self.corpus.report.conflict += 1;
                continue;
            };
            // SemEval offsets count characters; `align_span` works in the same unit.
            match align_span(&tokens, span.from, span.to) {
                Some((i, j)) => {
                    self.corpus.report.kept += 1;
                    self.corpus.instances.push(TextInstance {
                        words: words.clone(),
                        aspect_start: i,
                        aspect_end: j,
                        label,
                        raw_text: text.to_string(),
                    });
                }
                None => {
                    log::debug!("unalignable aspect [{}, {}) in {text:?}", span.from, span.to);
                    self.corpus.report.unalignable += 1;
                }
            }
        }
    }
}

fn parse_label(raw: &str) -> Result<Option<Polarity>, String> {
    if raw.eq_ignore_ascii_case("conflict") {
        return Ok(None);
    }
    raw.parse::<Polarity>().map(Some)
}

/// Parse SemEval 2014 (`aspectTerm`) or 2015/2016 (`Opinion`) markup.
pub fn parse_semeval_xml_str(xml: &str, origin: &str) -> Result<Corpus, IngestError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| IngestError::Parse {
        location: format!("{origin}:{}", e.pos()),
        message: e.to_string(),
    })?;
    let err_at = |node: roxmltree::Node, message: String| IngestError::Parse {
        location: format!("{origin}:{}", doc.text_pos_at(node.range().start)),
        message,
    };
    let attr = |node: roxmltree::Node, name: &str| -> Result<String, IngestError> {
        node.attribute(name)
            .map(str::to_string)
            .ok_or_else(|| err_at(node, format!("<{}> lacks `{name}`", node.tag_name().name())))
    };
    let offset = |node: roxmltree::Node, name: &str| -> Result<usize, IngestError> {
        let raw = attr(node, name)?;
        raw.parse()
            .map_err(|_| err_at(node, format!("`{name}` is not an offset: {raw:?}")))
    };

    let mut builder = Builder::new();
    for sentence in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let text_node = sentence
            .children()
            .find(|n| n.has_tag_name("text"))
            .ok_or_else(|| err_at(sentence, "<sentence> has no <text>".into()))?;
        let text = text_node.text().unwrap_or("");

        let mut spans: Vec<Span> = Vec::new();
        let mut opinions: Vec<(usize, usize, Option<Polarity>)> = Vec::new();
        for node in sentence.descendants() {
            if node.has_tag_name("aspectTerm") {
                let label = parse_label(&attr(node, "polarity")?).map_err(|m| err_at(node, m))?;
                spans.push(Span {
                    from: offset(node, "from")?,
                    to: offset(node, "to")?,
                    label,
                });
            } else if node.has_tag_name("Opinion") {
                let target = node.attribute("target").unwrap_or("NULL");
                if target == "NULL" {
                    builder.corpus.report.implicit_target += 1;
                    continue;
                }
                let label = parse_label(&attr(node, "polarity")?).map_err(|m| err_at(node, m))?;
                opinions.push((offset(node, "from")?, offset(node, "to")?, label));
            }
        }

        // One target may carry several category opinions: collapse repeats and
        // treat disagreeing polarities on one span as a conflict.
        let mut seen: Vec<(usize, usize, Option<Polarity>)> = Vec::new();
        for (from, to, label) in opinions {
            match seen.iter_mut().find(|(f, t, _)| *f == from && *t == to) {
                Some(existing) => {
                    builder.corpus.report.duplicate += 1;
                    if existing.2 != label {
                        existing.2 = None;
                    }
                }
                None => seen.push((from, to, label)),
            }
        }
        spans.extend(seen.into_iter().map(|(from, to, label)| Span { from, to, label }));
        builder.sentence(text, spans);
    }
    Ok(builder.corpus)
}

#[derive(Deserialize)]
struct JsonRecord {
    text: String,
    aspect_char_start: usize,
    aspect_char_end: usize,
    label: String,
}

/// One JSON object per line: `text`, `aspect_char_start`, `aspect_char_end`
/// (exclusive), `label`. Blank lines are skipped.
pub fn parse_jsonl_str(data: &str, origin: &str) -> Result<Corpus, IngestError> {
    let mut builder = Builder::new();
    for (lineno, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = || format!("{origin}:{}", lineno + 1);
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            location: format!("{}:{}", location(), e.column()),
            message: e.to_string(),
        })?;
        let label = parse_label(&rec.label).map_err(|message| IngestError::Parse {
            location: location(),
            message,
        })?;
        builder.sentence(
            &rec.text,
            vec![Span {
                from: rec.aspect_char_start,
                to: rec.aspect_char_end,
                label,
            }],
        );
    }
    Ok(builder.corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEMEVAL14: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<sentences>
    <sentence id="1">
        <text>Food is usually very good, though I worry about freshness of raw vegetables.</text>
        <aspectTerms>
            <aspectTerm term="Food" polarity="positive" from="0" to="4"/>
            <aspectTerm term="raw vegetables" polarity="negative" from="61" to="75"/>
        </aspectTerms>
    </sentence>
    <sentence id="2">
        <text>The staff was both rude and helpful.</text>
        <aspectTerms>
            <aspectTerm term="staff" polarity="conflict" from="4" to="9"/>
        </aspectTerms>
    </sentence>
    <sentence id="3">
        <text>Nothing to see here.</text>
    </sentence>
</sentences>"#;

    #[test]
    fn two_aspects_make_two_instances() {
        let c = parse_semeval_xml_str(SEMEVAL14, "t").unwrap();
        assert_eq!(c.instances.len(), 2);
        let (a, b) = (&c.instances[0], &c.instances[1]);
        assert_eq!(a.words, b.words);
        assert_eq!((a.aspect_start, a.aspect_end), (0, 0));
        assert_eq!(&b.words[b.aspect_start..=b.aspect_end], ["raw", "vegetables"]);
        assert_eq!(a.label, Polarity::Positive);
        assert_eq!(b.label, Polarity::Negative);
        assert_eq!(c.report.conflict, 1);
        assert_eq!(c.report.sentences, 3);
        assert_eq!(c.report.kept, 2);
    }

    #[test]
    fn conflict_only_sentence_yields_nothing() {
        let xml = r#"<sentences><sentence id="2"><text>The staff was rude.</text>
<aspectTerms><aspectTerm term="staff" polarity="conflict" from="4" to="9"/></aspectTerms>
</sentence></sentences>"#;
        let c = parse_semeval_xml_str(xml, "t").unwrap();
        assert!(c.instances.is_empty());
        assert_eq!(c.report.conflict, 1);
    }

    #[test]
    fn opinion_format_dedupes_and_skips_null() {
        let xml = r#"<Reviews><Review rid="1"><sentences>
<sentence id="1:0"><text>Great pizza, slow service.</text><Opinions>
<Opinion target="pizza" category="FOOD#QUALITY" polarity="positive" from="6" to="11"/>
<Opinion target="pizza" category="FOOD#STYLE" polarity="positive" from="6" to="11"/>
<Opinion target="service" category="SERVICE#GENERAL" polarity="negative" from="18" to="25"/>
<Opinion target="NULL" category="RESTAURANT#GENERAL" polarity="positive" from="0" to="0"/>
</Opinions></sentence>
<sentence id="1:1"><text>Pasta is ok.</text><Opinions>
<Opinion target="Pasta" category="A" polarity="positive" from="0" to="5"/>
<Opinion target="Pasta" category="B" polarity="negative" from="0" to="5"/>
</Opinions></sentence>
</sentences></Review></Reviews>"#;
        let c = parse_semeval_xml_str(xml, "t").unwrap();
        assert_eq!(c.instances.len(), 2);
        assert_eq!(c.report.duplicate, 2);
        assert_eq!(c.report.implicit_target, 1);
        assert_eq!(c.report.conflict, 1);
    }

    #[test]
    fn malformed_markup_reports_position() {
        let err = parse_semeval_xml_str("<sentences><sentence>", "bad.xml").unwrap_err();
        match err {
            IngestError::Parse { location, .. } => assert!(location.starts_with("bad.xml:1:"), "{location}"),
            other => panic!("{other}"),
        }
        let missing = r#"<sentences><sentence><text>a</text><aspectTerms>
<aspectTerm term="a" from="0" to="1"/></aspectTerms></sentence></sentences>"#;
        let err = parse_semeval_xml_str(missing, "m.xml").unwrap_err().to_string();
        assert!(err.contains("m.xml:2:") && err.contains("polarity"), "{err}");
    }

    #[test]
    fn jsonl_records_and_errors() {
        let data = r#"{"text": "Food is good.", "aspect_char_start": 0, "aspect_char_end": 4, "label": "positive"}

{"text": "x y", "aspect_char_start": 10, "aspect_char_end": 12, "label": "neutral"}
{"text": "a b", "aspect_char_start": 0, "aspect_char_end": 1, "label": "conflict"}"#;
        let c = parse_jsonl_str(data, "f.jsonl").unwrap();
        assert_eq!(c.instances.len(), 1);
        assert_eq!(c.instances[0].words, ["food", "is", "good", "."]);
        assert_eq!(c.report.unalignable, 1);
        assert_eq!(c.report.conflict, 1);
        let err = parse_jsonl_str("{\"text\": 3}", "g.jsonl").unwrap_err().to_string();
        assert!(err.starts_with("g.jsonl:1:"), "{err}");
    }

    #[test]
    fn parsing_is_deterministic() {
        let a = parse_semeval_xml_str(SEMEVAL14, "t").unwrap();
        let b = parse_semeval_xml_str(SEMEVAL14, "t").unwrap();
        assert_eq!(a, b);
        for inst in &a.instances {
            assert!(inst.aspect_start <= inst.aspect_end && inst.aspect_end < inst.words.len());
        }
    }
}
