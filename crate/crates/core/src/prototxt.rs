//! Caffe `.prototxt` reader and writer.
//!
//! Supports the protobuf text-format subset Caffe network files use:
//! `key: value` scalars, nested `key { ... }` messages, repeated keys and
//! `#` comments. Only new-style `layer { type: "..." }` blocks are accepted.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{ConvParams, Field, FieldValue, LayerKind, LayerSpec, NetworkGraph, PoolMode, PoolParams, TensorShape};

const MAX_DEPTH: usize = 64;

/// 1-based position of a token in the source text. Columns count characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u32,
    pub col: u32,
    pub length: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {span}: expected {}, found {found}", .expected.join(" or "))]
    Syntax { span: SourceSpan, expected: Vec<String>, found: String },
    #[error("unsupported layer type `{kind}` in layer `{name}` at {span}")]
    UnsupportedLayer { name: String, kind: String, span: SourceSpan },
    #[error("duplicate layer name `{name}` at {span}")]
    DuplicateLayerName { name: String, span: SourceSpan },
    #[error("legacy `layers` block at {span}: only new-style `layer {{ type: \"...\" }}` definitions are supported")]
    LegacyFormat { span: SourceSpan },
    #[error("invalid value at {span}: {message}")]
    InvalidValue { span: SourceSpan, message: String },
    #[error("missing field `{field}` in {context} at {span}")]
    MissingField { span: SourceSpan, field: &'static str, context: &'static str },
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    InvalidUtf8 { offset: usize },
    #[error("message nesting deeper than {MAX_DEPTH} levels at {span}")]
    TooDeep { span: SourceSpan },
}

impl ParseError {
    pub fn span(&self) -> Option<SourceSpan> {
        match self {
            ParseError::Syntax { span, .. }
            | ParseError::UnsupportedLayer { span, .. }
            | ParseError::DuplicateLayerName { span, .. }
            | ParseError::LegacyFormat { span }
            | ParseError::InvalidValue { span, .. }
            | ParseError::MissingField { span, .. }
            | ParseError::TooDeep { span } => Some(*span),
            ParseError::InvalidUtf8 { .. } => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::UnsupportedLayer { .. } => "UnsupportedLayer",
            ParseError::DuplicateLayerName { .. } => "DuplicateLayerName",
            ParseError::LegacyFormat { .. } => "LegacyFormat",
            ParseError::InvalidValue { .. } => "InvalidValue",
            ParseError::MissingField { .. } => "MissingField",
            ParseError::InvalidUtf8 { .. } => "InvalidUtf8",
            ParseError::TooDeep { .. } => "TooDeep",
        }
    }
}

/// Source position of each layer's `layer` keyword, keyed by layer name.
pub type LayerSpans = HashMap<String, SourceSpan>;

pub fn parse(text: &str) -> Result<NetworkGraph, ParseError> {
    parse_with_spans(text).map(|(g, _)| g)
}

pub fn parse_bytes(bytes: &[u8]) -> Result<NetworkGraph, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::InvalidUtf8 { offset: e.valid_up_to() })?;
    parse(text)
}

pub fn parse_with_spans(text: &str) -> Result<(NetworkGraph, LayerSpans), ParseError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut p = Parser { tokens, pos: 0 };
    let fields = p.message(0, None)?;
    build_graph(fields)
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    LBrace,
    RBrace,
    Colon,
    Sep,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Sep => "separator".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { chars: text.chars().peekable(), line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokenize(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c == '#' {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(&c) = self.chars.peek() else {
                out.push(Token { tok: Tok::Eof, span: SourceSpan { line, col, length: 0 } });
                return Ok(out);
            };
            let tok = match c {
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                ':' => {
                    self.bump();
                    Tok::Colon
                }
                ',' | ';' => {
                    self.bump();
                    Tok::Sep
                }
                '"' | '\'' => Tok::Str(self.string(c, line, col)?),
                c if c.is_ascii_alphabetic() || c == '_' => Tok::Ident(self.word()),
                c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => Tok::Number(self.number()),
                other => {
                    return Err(ParseError::Syntax {
                        span: SourceSpan { line, col, length: 1 },
                        expected: vec!["identifier".into(), "value".into(), "`{`".into(), "`}`".into()],
                        found: format!("character `{}`", other.escape_debug()),
                    })
                }
            };
            let length = if self.line == line { self.col - col } else { 1 };
            out.push(Token { tok, span: SourceSpan { line, col, length } });
        }
    }

    fn word(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn number(&mut self) -> String {
        let mut s = String::new();
        let mut prev = ' ';
        while let Some(&c) = self.chars.peek() {
            let sign_ok = (c == '-' || c == '+') && (s.is_empty() || prev == 'e' || prev == 'E');
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || sign_ok {
                s.push(c);
                prev = c;
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn string(&mut self, quote: char, line: u32, col: u32) -> Result<String, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ParseError::Syntax {
                        span: SourceSpan { line, col, length: 1 },
                        expected: vec![format!("closing `{quote}`")],
                        found: "end of input".into(),
                    })
                }
                Some(c) if c == quote => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    Some(c) => s.push(c),
                    None => continue,
                },
                Some(c) => s.push(c),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// generic text-format tree

#[derive(Debug, Clone)]
struct RawField {
    key: String,
    key_span: SourceSpan,
    value: RawValue,
    value_span: SourceSpan,
}

#[derive(Debug, Clone)]
enum RawValue {
    Scalar(String),
    Str(String),
    Message(Vec<RawField>),
}

impl RawField {
    fn into_field(self) -> Field {
        Field { key: self.key, value: self.value.into_value() }
    }
}

impl RawValue {
    fn into_value(self) -> FieldValue {
        match self {
            RawValue::Scalar(s) => FieldValue::Scalar(s),
            RawValue::Str(s) => FieldValue::Str(s),
            RawValue::Message(fs) => FieldValue::Message(fs.into_iter().map(RawField::into_field).collect()),
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn next(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn unexpected(t: &Token, expected: &[&str]) -> ParseError {
        ParseError::Syntax {
            span: t.span,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    /// Parses fields until `}` (nested, `open` is the opening brace) or end of input.
    fn message(&mut self, depth: usize, open: Option<SourceSpan>) -> Result<Vec<RawField>, ParseError> {
        let mut fields = Vec::new();
        loop {
            let t = self.next();
            match t.tok {
                Tok::Ident(key) => fields.push(self.field(key, t.span, depth)?),
                Tok::Sep => continue,
                Tok::RBrace if open.is_some() => return Ok(fields),
                Tok::Eof if open.is_none() => return Ok(fields),
                Tok::Eof => {
                    return Err(ParseError::Syntax {
                        span: open.expect("nested"),
                        expected: vec!["`}` closing this block".into()],
                        found: "end of input".into(),
                    })
                }
                _ if open.is_some() => return Err(Self::unexpected(&t, &["field name", "`}`"])),
                _ => return Err(Self::unexpected(&t, &["field name", "end of input"])),
            }
        }
    }

    fn field(&mut self, key: String, key_span: SourceSpan, depth: usize) -> Result<RawField, ParseError> {
        let mut t = self.next();
        let had_colon = t.tok == Tok::Colon;
        if had_colon {
            t = self.next();
        }
        let value = match t.tok {
            Tok::LBrace => {
                if depth + 1 >= MAX_DEPTH {
                    return Err(ParseError::TooDeep { span: t.span });
                }
                RawValue::Message(self.message(depth + 1, Some(t.span))?)
            }
            Tok::Number(n) if had_colon => RawValue::Scalar(n),
            Tok::Ident(i) if had_colon => RawValue::Scalar(i),
            Tok::Str(s) if had_colon => RawValue::Str(s),
            _ if had_colon => return Err(Self::unexpected(&t, &["value", "`{`"])),
            _ => return Err(Self::unexpected(&t, &["`:`", "`{`"])),
        };
        Ok(RawField { key, key_span, value, value_span: t.span })
    }
}

// ---------------------------------------------------------------------------
// tree -> graph

fn build_graph(fields: Vec<RawField>) -> Result<(NetworkGraph, LayerSpans), ParseError> {
    let mut graph = NetworkGraph::default();
    let mut spans = LayerSpans::new();
    let mut legacy_inputs: Vec<(String, SourceSpan)> = Vec::new();
    let mut legacy_dims: Vec<u32> = Vec::new();
    let mut legacy_dims_span = None;

    for f in fields {
        match f.key.as_str() {
            "name" => graph.name = Some(expect_str(&f)?),
            "layer" => {
                let span = f.key_span;
                let RawValue::Message(body) = f.value else {
                    return Err(invalid(f.value_span, "`layer` must be a message block"));
                };
                let layer = build_layer(body, span)?;
                if spans.contains_key(&layer.name) {
                    return Err(ParseError::DuplicateLayerName { name: layer.name, span });
                }
                spans.insert(layer.name.clone(), span);
                graph.layers.push(layer);
            }
            "layers" => return Err(ParseError::LegacyFormat { span: f.key_span }),
            "input" => legacy_inputs.push((expect_str(&f)?, f.key_span)),
            "input_dim" => {
                legacy_dims_span.get_or_insert(f.key_span);
                legacy_dims.push(expect_u32(&f)?);
            }
            "input_shape" => {
                legacy_dims_span.get_or_insert(f.key_span);
                legacy_dims.extend(shape_dims(f)?);
            }
            _ => graph.annotations.push(f.into_field()),
        }
    }

    if let Some((input, span)) = legacy_inputs.first() {
        if legacy_inputs.len() > 1 {
            return Err(invalid(legacy_inputs[1].1, "only one network input is supported"));
        }
        let shape = dims_to_shape(&legacy_dims, legacy_dims_span.unwrap_or(*span))?;
        if spans.contains_key(input) {
            return Err(ParseError::DuplicateLayerName { name: input.clone(), span: *span });
        }
        spans.insert(input.clone(), *span);
        graph.layers.insert(0, LayerSpec::data(input, shape));
    } else if let Some(span) = legacy_dims_span {
        return Err(ParseError::MissingField { span, field: "input", context: "network" });
    }
    Ok((graph, spans))
}

fn build_layer(body: Vec<RawField>, span: SourceSpan) -> Result<LayerSpec, ParseError> {
    let mut name = None;
    let mut kind_field = None;
    let mut bottoms = Vec::new();
    let mut tops = Vec::new();
    let mut rest = Vec::new();
    for f in body {
        match f.key.as_str() {
            "name" => set_once(&mut name, expect_str(&f)?, &f)?,
            "type" => {
                let s = match &f.value {
                    RawValue::Str(s) | RawValue::Scalar(s) => s.clone(),
                    RawValue::Message(_) => return Err(invalid(f.value_span, "`type` must be a string")),
                };
                set_once(&mut kind_field, (s, f.value_span), &f)?;
            }
            "bottom" => bottoms.push(expect_str(&f)?),
            "top" => tops.push(expect_str(&f)?),
            _ => rest.push(f),
        }
    }
    let name = name.ok_or(ParseError::MissingField { span, field: "name", context: "layer" })?;
    let (type_name, _type_span) = kind_field.ok_or(ParseError::MissingField { span, field: "type", context: "layer" })?;
    let kind = LayerKind::from_type_name(&type_name)
        .ok_or_else(|| ParseError::UnsupportedLayer { name: name.clone(), kind: type_name.clone(), span })?;

    let mut layer = LayerSpec {
        name,
        kind,
        bottoms,
        tops,
        conv: None,
        pool: None,
        dropout_ratio: None,
        input_shape: None,
        annotations: Vec::new(),
    };
    for f in rest {
        match (kind, f.key.as_str()) {
            (LayerKind::Convolution, "convolution_param") | (LayerKind::InnerProduct, "inner_product_param") => {
                if layer.conv.is_some() {
                    return Err(invalid(f.key_span, format!("`{}` given twice", f.key)));
                }
                layer.conv = Some(conv_params(f, kind)?);
            }
            (LayerKind::Pooling, "pooling_param") => {
                if layer.pool.is_some() {
                    return Err(invalid(f.key_span, "`pooling_param` given twice"));
                }
                layer.pool = Some(pool_params(f)?);
            }
            (LayerKind::Dropout, "dropout_param") => {
                for g in message_body(f)? {
                    if g.key == "dropout_ratio" {
                        set_once(&mut layer.dropout_ratio, expect_f64(&g)?, &g)?;
                    } else {
                        layer.annotations.push(Field {
                            key: "dropout_param".into(),
                            value: FieldValue::Message(vec![g.into_field()]),
                        });
                    }
                }
            }
            (LayerKind::Data, "input_param") => {
                let mut dims = Vec::new();
                let span = f.key_span;
                for g in message_body(f)? {
                    if g.key == "shape" {
                        dims.extend(shape_dims(g)?);
                    } else {
                        return Err(invalid(g.key_span, format!("unsupported input_param field `{}`", g.key)));
                    }
                }
                layer.input_shape = Some(dims_to_shape(&dims, span)?);
            }
            _ => layer.annotations.push(f.into_field()),
        }
    }
    Ok(layer)
}

fn conv_params(f: RawField, kind: LayerKind) -> Result<ConvParams, ParseError> {
    let span = f.key_span;
    let (mut num_output, mut kernel, mut stride, mut pad) = (None, None, None, None);
    let mut extra = Vec::new();
    for g in message_body(f)? {
        match g.key.as_str() {
            "num_output" => set_once(&mut num_output, expect_u32(&g)?, &g)?,
            "kernel_size" if kind == LayerKind::Convolution => set_once(&mut kernel, expect_u32(&g)?, &g)?,
            "stride" if kind == LayerKind::Convolution => set_once(&mut stride, expect_u32(&g)?, &g)?,
            "pad" if kind == LayerKind::Convolution => set_once(&mut pad, expect_u32(&g)?, &g)?,
            "kernel_h" | "kernel_w" | "stride_h" | "stride_w" | "pad_h" | "pad_w" => {
                return Err(invalid(g.key_span, "only square kernels are supported (use kernel_size/stride/pad)"))
            }
            _ => extra.push(g.into_field()),
        }
    }
    let context = if kind == LayerKind::Convolution { "convolution_param" } else { "inner_product_param" };
    let num_output = num_output.ok_or(ParseError::MissingField { span, field: "num_output", context })?;
    let kernel = match kind {
        LayerKind::Convolution => kernel.ok_or(ParseError::MissingField { span, field: "kernel_size", context })?,
        _ => 1,
    };
    Ok(ConvParams { num_output, kernel, stride: stride.unwrap_or(1), pad: pad.unwrap_or(0), extra })
}

fn pool_params(f: RawField) -> Result<PoolParams, ParseError> {
    let (mut mode, mut kernel, mut stride, mut global) = (None, None, None, None);
    let mut extra = Vec::new();
    let span = f.key_span;
    for g in message_body(f)? {
        match g.key.as_str() {
            "pool" => {
                let m = match expect_scalar(&g)?.as_str() {
                    "MAX" => PoolMode::Max,
                    "AVE" => PoolMode::Avg,
                    other => return Err(invalid(g.value_span, format!("unsupported pooling method `{other}`"))),
                };
                set_once(&mut mode, m, &g)?;
            }
            "kernel_size" => set_once(&mut kernel, expect_u32(&g)?, &g)?,
            "stride" => set_once(&mut stride, expect_u32(&g)?, &g)?,
            "global_pooling" => set_once(&mut global, expect_bool(&g)?, &g)?,
            "pad" => {
                if expect_u32(&g)? != 0 {
                    return Err(invalid(g.value_span, "padded pooling is not supported"));
                }
                extra.push(g.into_field());
            }
            _ => extra.push(g.into_field()),
        }
    }
    let global = global.unwrap_or(false);
    let kernel = match (kernel, global) {
        (Some(k), _) => k,
        (None, true) => 0,
        (None, false) => return Err(ParseError::MissingField { span, field: "kernel_size", context: "pooling_param" }),
    };
    Ok(PoolParams { mode: mode.unwrap_or(PoolMode::Max), kernel, stride: stride.unwrap_or(1), global, extra })
}

fn shape_dims(f: RawField) -> Result<Vec<u32>, ParseError> {
    message_body(f)?
        .iter()
        .map(|g| {
            if g.key == "dim" {
                expect_u32(g)
            } else {
                Err(invalid(g.key_span, format!("unexpected field `{}` in shape", g.key)))
            }
        })
        .collect()
}

fn dims_to_shape(dims: &[u32], span: SourceSpan) -> Result<TensorShape, ParseError> {
    match *dims {
        [_, c, h, w] | [c, h, w] => Ok(TensorShape::new(c, h, w)),
        _ => Err(invalid(span, format!("input shape needs 3 or 4 dims, got {}", dims.len()))),
    }
}

fn invalid(span: SourceSpan, message: impl Into<String>) -> ParseError {
    ParseError::InvalidValue { span, message: message.into() }
}

fn set_once<T>(slot: &mut Option<T>, v: T, f: &RawField) -> Result<(), ParseError> {
    if slot.is_some() {
        return Err(invalid(f.key_span, format!("field `{}` given more than once", f.key)));
    }
    *slot = Some(v);
    Ok(())
}

fn message_body(f: RawField) -> Result<Vec<RawField>, ParseError> {
    match f.value {
        RawValue::Message(m) => Ok(m),
        _ => Err(invalid(f.value_span, format!("`{}` must be a message block", f.key))),
    }
}

fn expect_str(f: &RawField) -> Result<String, ParseError> {
    match &f.value {
        RawValue::Str(s) => Ok(s.clone()),
        _ => Err(invalid(f.value_span, format!("`{}` expects a quoted string", f.key))),
    }
}

fn expect_scalar(f: &RawField) -> Result<String, ParseError> {
    match &f.value {
        RawValue::Scalar(s) => Ok(s.clone()),
        _ => Err(invalid(f.value_span, format!("`{}` expects a scalar value", f.key))),
    }
}

fn expect_u32(f: &RawField) -> Result<u32, ParseError> {
    expect_scalar(f)?
        .parse::<u32>()
        .map_err(|_| invalid(f.value_span, format!("`{}` expects a non-negative 32-bit integer", f.key)))
}

fn expect_f64(f: &RawField) -> Result<f64, ParseError> {
    expect_scalar(f)?
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| invalid(f.value_span, format!("`{}` expects a finite number", f.key)))
}

fn expect_bool(f: &RawField) -> Result<bool, ParseError> {
    match expect_scalar(f)?.as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(invalid(f.value_span, format!("`{}` expects true or false", f.key))),
    }
}

// ---------------------------------------------------------------------------
// writer

/// Renders the graph as prototxt with 2-space indentation and a fixed field order.
pub fn serialize(graph: &NetworkGraph) -> String {
    let mut w = Writer::default();
    if let Some(name) = &graph.name {
        w.str_field("name", name);
    }
    for f in &graph.annotations {
        w.field(f);
    }
    for l in &graph.layers {
        w.open("layer");
        w.str_field("name", &l.name);
        w.str_field("type", l.kind.type_name());
        for b in &l.bottoms {
            w.str_field("bottom", b);
        }
        for t in &l.tops {
            w.str_field("top", t);
        }
        match l.kind {
            LayerKind::Data => {
                if let Some(s) = l.input_shape {
                    w.open("input_param");
                    w.open("shape");
                    for d in [1, s.ch, s.h, s.w] {
                        w.scalar("dim", d);
                    }
                    w.close();
                    w.close();
                }
            }
            LayerKind::Convolution | LayerKind::InnerProduct => {
                if let Some(c) = &l.conv {
                    if l.kind == LayerKind::Convolution {
                        w.open("convolution_param");
                        w.scalar("num_output", c.num_output);
                        w.scalar("kernel_size", c.kernel);
                        w.scalar("stride", c.stride);
                        w.scalar("pad", c.pad);
                    } else {
                        w.open("inner_product_param");
                        w.scalar("num_output", c.num_output);
                    }
                    for f in &c.extra {
                        w.field(f);
                    }
                    w.close();
                }
            }
            LayerKind::Pooling => {
                if let Some(p) = &l.pool {
                    w.open("pooling_param");
                    w.scalar("pool", if p.mode == PoolMode::Max { "MAX" } else { "AVE" });
                    if p.global {
                        w.scalar("global_pooling", "true");
                        if p.kernel != 0 {
                            w.scalar("kernel_size", p.kernel);
                        }
                    } else {
                        w.scalar("kernel_size", p.kernel);
                    }
                    w.scalar("stride", p.stride);
                    for f in &p.extra {
                        w.field(f);
                    }
                    w.close();
                }
            }
            LayerKind::Dropout => {
                if let Some(r) = l.dropout_ratio {
                    w.open("dropout_param");
                    w.scalar("dropout_ratio", r);
                    w.close();
                }
            }
            _ => {}
        }
        for f in &l.annotations {
            w.field(f);
        }
        w.close();
    }
    w.out
}

#[derive(Default)]
struct Writer {
    out: String,
    depth: usize,
}

impl Writer {
    fn indent(&mut self) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
    }

    fn open(&mut self, key: &str) {
        self.indent();
        let _ = writeln!(self.out, "{key} {{");
        self.depth += 1;
    }

    fn close(&mut self) {
        self.depth -= 1;
        self.indent();
        self.out.push_str("}\n");
    }

    fn scalar(&mut self, key: &str, v: impl fmt::Display) {
        self.indent();
        let _ = writeln!(self.out, "{key}: {v}");
    }

    fn str_field(&mut self, key: &str, v: &str) {
        self.indent();
        let _ = writeln!(self.out, "{key}: \"{}\"", escape(v));
    }

    fn field(&mut self, f: &Field) {
        match &f.value {
            FieldValue::Scalar(s) => self.scalar(&f.key, s),
            FieldValue::Str(s) => self.str_field(&f.key, s),
            FieldValue::Message(fs) => {
                self.open(&f.key);
                for g in fs {
                    self.field(g);
                }
                self.close();
            }
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}
