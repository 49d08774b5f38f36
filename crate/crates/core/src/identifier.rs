//! Signal string identifiers.
//!
//! A `str_id` names one data signal as a generic-signal locator (or an
//! acquisition channel) plus a record number, a revision and a units tag:
//!
//! ```text
//! str_id  = [schema ":"] body [":" int [":" int]] ["[" units "]"]
//! schema  = "CDB" / "DAQ" / "FS"
//! body    = alias / name "." source / numeric-id        ; CDB
//!         / computer "/" board "/" channel              ; DAQ, FS
//! int     = ["-"] 1*DIGIT
//! ```
//!
//! Omitted parts default to schema `CDB`, record `-1`, revision `-1` and
//! units `default`. Negative record and revision numbers count back from the
//! latest one (`-1` is the latest, `-2` the one before it, ...).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identification schema of a [`SignalRef`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Schema {
    /// Native generic-signal identification.
    #[serde(rename = "CDB")]
    Cdb,
    /// Acquisition channel, CDB native channel id.
    #[serde(rename = "DAQ")]
    Daq,
    /// Acquisition channel, FireSignal node/board/channel id.
    #[serde(rename = "FS")]
    Fs,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::Cdb => "CDB",
            Schema::Daq => "DAQ",
            Schema::Fs => "FS",
        }
    }

    fn from_keyword(s: &str) -> Option<Schema> {
        match s {
            "CDB" => Some(Schema::Cdb),
            "DAQ" => Some(Schema::Daq),
            "FS" => Some(Schema::Fs),
            _ => None,
        }
    }

    pub fn is_channel(self) -> bool {
        matches!(self, Schema::Daq | Schema::Fs)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the three unique ways to name a generic signal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum GenericLocator {
    Alias { alias: String },
    NameSource { name: String, source: String },
    Id { id: i64 },
}

impl GenericLocator {
    pub fn alias(alias: impl Into<String>) -> Self {
        GenericLocator::Alias {
            alias: alias.into(),
        }
    }

    pub fn name_source(name: impl Into<String>, source: impl Into<String>) -> Self {
        GenericLocator::NameSource {
            name: name.into(),
            source: source.into(),
        }
    }

    pub fn id(id: i64) -> Self {
        GenericLocator::Id { id }
    }

    /// Parses a bare `gs_str_id` (no schema, record or units).
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut p = Parser::new(text);
        let loc = p.generic_locator()?;
        p.end()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            GenericLocator::Alias { alias } => {
                check_token(alias, "alias")?;
                if alias.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(format!("alias {alias:?} is all digits"));
                }
                if alias.bytes().filter(|&b| b == b'.').count() == 1 {
                    return Err(format!("alias {alias:?} contains exactly one '.'"));
                }
                Ok(())
            }
            GenericLocator::NameSource { name, source } => {
                check_token(name, "name")?;
                check_token(source, "source")?;
                if name.contains('.') || source.contains('.') {
                    return Err("name and source must not contain '.'".into());
                }
                Ok(())
            }
            GenericLocator::Id { id } => {
                if *id < 0 {
                    Err(format!("numeric id {id} is negative"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for GenericLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenericLocator::Alias { alias } => f.write_str(alias),
            GenericLocator::NameSource { name, source } => write!(f, "{name}.{source}"),
            GenericLocator::Id { id } => write!(f, "{id}"),
        }
    }
}

/// A data acquisition channel, `computer/board/channel`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelKey {
    pub computer_id: String,
    pub board_id: String,
    pub channel_id: String,
}

impl ChannelKey {
    pub fn new(
        computer_id: impl Into<String>,
        board_id: impl Into<String>,
        channel_id: impl Into<String>,
    ) -> Self {
        ChannelKey {
            computer_id: computer_id.into(),
            board_id: board_id.into(),
            channel_id: channel_id.into(),
        }
    }

    /// Parses `computer/board/channel`.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut p = Parser::new(text);
        let key = p.channel_key()?;
        p.end()?;
        Ok(key)
    }

    pub fn validate(&self) -> Result<(), String> {
        check_token(&self.computer_id, "computer id")?;
        check_token(&self.board_id, "board id")?;
        check_token(&self.channel_id, "channel id")
    }
}

impl fmt::Display for ChannelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.computer_id, self.board_id, self.channel_id
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locator {
    Generic(GenericLocator),
    Channel(ChannelKey),
}

/// Which form of the numbers a reader wants back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitsTag {
    /// Linear transform applied: physical units.
    #[default]
    Default,
    /// Stored numbers as written (acquisition levels).
    Raw,
}

impl UnitsTag {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitsTag::Default => "default",
            UnitsTag::Raw => "raw",
        }
    }
}

impl fmt::Display for UnitsTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed form of a `str_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignalRef {
    pub schema: Schema,
    pub locator: Locator,
    pub record_number: i64,
    pub revision: i64,
    pub units: UnitsTag,
}

impl SignalRef {
    /// A CDB-schema reference with default record, revision and units.
    pub fn generic(locator: GenericLocator) -> Self {
        SignalRef {
            schema: Schema::Cdb,
            locator: Locator::Generic(locator),
            record_number: -1,
            revision: -1,
            units: UnitsTag::Default,
        }
    }

    pub fn channel(schema: Schema, key: ChannelKey) -> Self {
        SignalRef {
            schema,
            locator: Locator::Channel(key),
            record_number: -1,
            revision: -1,
            units: UnitsTag::Default,
        }
    }

    pub fn at(mut self, record_number: i64, revision: i64) -> Self {
        self.record_number = record_number;
        self.revision = revision;
        self
    }

    pub fn with_units(mut self, units: UnitsTag) -> Self {
        self.units = units;
        self
    }

    pub fn validate(&self) -> Result<(), InvalidRef> {
        let res = match (&self.schema, &self.locator) {
            (Schema::Cdb, Locator::Generic(g)) => g.validate(),
            (Schema::Daq | Schema::Fs, Locator::Channel(k)) => k.validate(),
            (Schema::Cdb, Locator::Channel(_)) => {
                Err("CDB schema requires a generic locator".into())
            }
            (_, Locator::Generic(_)) => {
                Err(format!("{} schema requires a channel key", self.schema))
            }
        };
        res.map_err(InvalidRef)
    }
}

impl std::str::FromStr for SignalRef {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_str_id(s)
    }
}

impl fmt::Display for SignalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.locator {
            Locator::Channel(key) => write!(f, "{}:{key}", self.schema)?,
            Locator::Generic(g) => {
                // A bare alias equal to a schema keyword would read back as a prefix.
                if matches!(g, GenericLocator::Alias { alias } if Schema::from_keyword(alias).is_some())
                {
                    f.write_str("CDB:")?;
                }
                write!(f, "{g}")?;
            }
        }
        write!(f, ":{}:{}", self.record_number, self.revision)?;
        if self.units != UnitsTag::Default {
            write!(f, "[{}]", self.units)?;
        }
        Ok(())
    }
}

/// Malformed identifier input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {}", expected.join(" or "))]
    Syntax {
        position: usize,
        expected: Vec<&'static str>,
    },
    #[error("unknown schema {0:?}")]
    UnknownSchema(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid signal reference: {0}")]
pub struct InvalidRef(pub String);

pub fn parse_str_id(text: &str) -> Result<SignalRef, ParseError> {
    Parser::new(text).str_id()
}

pub fn format_str_id(r: &SignalRef) -> Result<String, InvalidRef> {
    r.validate()?;
    Ok(r.to_string())
}

fn is_token_byte(b: u8) -> bool {
    !matches!(b, b':' | b'/' | b'[' | b']') && !b.is_ascii_whitespace() && !b.is_ascii_control()
}

fn check_token(s: &str, what: &str) -> Result<(), String> {
    if s.is_empty() {
        return Err(format!("{what} is empty"));
    }
    if !s.bytes().all(is_token_byte) {
        return Err(format!("{what} {s:?} contains a reserved character"));
    }
    Ok(())
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn fail<T>(&self, expected: &[&'static str]) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.pos,
            expected: expected.to_vec(),
        })
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8, what: &'static str) -> Result<(), ParseError> {
        if self.eat(b) {
            Ok(())
        } else {
            self.fail(&[what])
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        if self.pos == self.src.len() {
            Ok(())
        } else {
            self.fail(&["end of input"])
        }
    }

    fn token(&mut self, what: &'static str) -> Result<&'a str, ParseError> {
        let start = self.pos;
        let len = self
            .rest()
            .bytes()
            .take_while(|&b| is_token_byte(b))
            .count();
        if len == 0 {
            return self.fail(&[what]);
        }
        self.pos += len;
        Ok(&self.src[start..self.pos])
    }

    fn str_id(&mut self) -> Result<SignalRef, ParseError> {
        if self.src.is_empty() {
            return self.fail(&["signal identifier"]);
        }
        let schema = self.schema()?;
        let locator = if schema.is_channel() {
            Locator::Channel(self.channel_key()?)
        } else {
            Locator::Generic(self.generic_locator()?)
        };
        let mut record_number = -1;
        let mut revision = -1;
        if self.eat(b':') {
            record_number = self.int()?;
            if self.eat(b':') {
                revision = self.int()?;
            }
        }
        let mut units = UnitsTag::Default;
        if self.eat(b'[') {
            units = self.units()?;
            self.expect(b']', "']'")?;
        }
        if self.peek() == Some(b':') {
            return self.fail(&["'['", "end of input"]);
        }
        self.end()?;
        Ok(SignalRef {
            schema,
            locator,
            record_number,
            revision,
            units,
        })
    }

    /// Consumes an explicit schema prefix if there is one.
    ///
    /// A leading segment that is not a known schema is still taken as a
    /// prefix attempt when what follows its colon cannot be a record number.
    fn schema(&mut self) -> Result<Schema, ParseError> {
        let rest = self.rest();
        let Some(colon) = rest.find(':') else {
            return Ok(Schema::Cdb);
        };
        let head = &rest[..colon];
        if let Some(schema) = Schema::from_keyword(head) {
            self.pos += colon + 1;
            return Ok(schema);
        }
        let after = &rest[colon + 1..];
        let digits_follow = after
            .bytes()
            .next()
            .is_some_and(|b| b == b'-' || b.is_ascii_digit());
        if !digits_follow
            && !head.is_empty()
            && head.bytes().all(is_token_byte)
            && !after.is_empty()
        {
            return Err(ParseError::UnknownSchema(head.to_string()));
        }
        Ok(Schema::Cdb)
    }

    fn generic_locator(&mut self) -> Result<GenericLocator, ParseError> {
        let start = self.pos;
        let tok = self.token("generic signal identifier")?;
        if tok.bytes().all(|b| b.is_ascii_digit()) {
            return match tok.parse::<i64>() {
                Ok(id) => Ok(GenericLocator::Id { id }),
                Err(_) => {
                    self.pos = start;
                    self.fail(&["numeric id within range"])
                }
            };
        }
        if let Some((name, source)) = tok.split_once('.') {
            if !source.contains('.') {
                if name.is_empty() {
                    self.pos = start;
                    return self.fail(&["signal name"]);
                }
                if source.is_empty() {
                    return self.fail(&["data source"]);
                }
                return Ok(GenericLocator::name_source(name, source));
            }
        }
        if self.peek() == Some(b'/') {
            self.pos = start;
            return self.fail(&["\"DAQ:\"", "\"FS:\""]);
        }
        Ok(GenericLocator::alias(tok))
    }

    fn channel_key(&mut self) -> Result<ChannelKey, ParseError> {
        let computer = self.token("computer id")?;
        self.expect(b'/', "'/'")?;
        let board = self.token("board id")?;
        self.expect(b'/', "'/'")?;
        let channel = self.token("channel id")?;
        if self.peek() == Some(b'/') {
            return self.fail(&["':'", "'['", "end of input"]);
        }
        Ok(ChannelKey::new(computer, board, channel))
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let start = self.pos;
        self.eat(b'-');
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.fail(&["digit"]);
        }
        self.pos += digits;
        self.src[start..self.pos].parse::<i64>().or_else(|_| {
            self.pos = start;
            self.fail(&["integer within range"])
        })
    }

    fn units(&mut self) -> Result<UnitsTag, ParseError> {
        let rest = self.rest();
        for (word, tag) in [("default", UnitsTag::Default), ("raw", UnitsTag::Raw)] {
            let next = rest.as_bytes().get(word.len());
            if rest.starts_with(word) && matches!(next, None | Some(b']')) {
                // A missing ']' is reported by the caller, after the word.
                self.pos += word.len();
                return Ok(tag);
            }
        }
        self.fail(&["\"default\"", "\"raw\""])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syntax_pos(text: &str) -> usize {
        match parse_str_id(text) {
            Err(ParseError::Syntax { position, expected }) => {
                assert!(!expected.is_empty());
                position
            }
            other => panic!("{text:?}: expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn alias_example() {
        let r = parse_str_id("I_plasma:4073:-1[default]").unwrap();
        assert_eq!(r.schema, Schema::Cdb);
        assert_eq!(
            r.locator,
            Locator::Generic(GenericLocator::alias("I_plasma"))
        );
        assert_eq!(
            (r.record_number, r.revision, r.units),
            (4073, -1, UnitsTag::Default)
        );
    }

    #[test]
    fn daq_example() {
        let r = parse_str_id("DAQ:ATCA_1/9/13:-1").unwrap();
        assert_eq!(r.schema, Schema::Daq);
        assert_eq!(
            r.locator,
            Locator::Channel(ChannelKey::new("ATCA_1", "9", "13"))
        );
        assert_eq!(
            (r.record_number, r.revision, r.units),
            (-1, -1, UnitsTag::Default)
        );
    }

    #[test]
    fn fs_example() {
        let r = parse_str_id("FS:PCIE_ATCA_ADC_01/BOARD_9/CHANNEL_013:4073").unwrap();
        assert_eq!(r.schema, Schema::Fs);
        assert_eq!(
            r.locator,
            Locator::Channel(ChannelKey::new(
                "PCIE_ATCA_ADC_01",
                "BOARD_9",
                "CHANNEL_013"
            ))
        );
        assert_eq!(
            (r.record_number, r.revision, r.units),
            (4073, -1, UnitsTag::Default)
        );
    }

    #[test]
    fn all_defaults() {
        let r = parse_str_id("T_e").unwrap();
        assert_eq!(r, SignalRef::generic(GenericLocator::alias("T_e")));
    }

    #[test]
    fn locator_forms() {
        let r = parse_str_id("42:1:2").unwrap();
        assert_eq!(r.locator, Locator::Generic(GenericLocator::id(42)));
        let r = parse_str_id("I_plasma.magnetics:7").unwrap();
        assert_eq!(
            r.locator,
            Locator::Generic(GenericLocator::name_source("I_plasma", "magnetics"))
        );
        let r = parse_str_id("a.b.c").unwrap();
        assert_eq!(r.locator, Locator::Generic(GenericLocator::alias("a.b.c")));
        let r = parse_str_id("CDB:x:3[raw]").unwrap();
        assert_eq!(
            r,
            SignalRef::generic(GenericLocator::alias("x"))
                .at(3, -1)
                .with_units(UnitsTag::Raw)
        );
    }

    #[test]
    fn format_examples() {
        let r = SignalRef::generic(GenericLocator::alias("I_plasma")).at(4073, -1);
        assert_eq!(format_str_id(&r).unwrap(), "I_plasma:4073:-1");
        let r = SignalRef::channel(Schema::Daq, ChannelKey::new("ATCA_1", "9", "13"));
        let s = format_str_id(&r).unwrap();
        assert_eq!(s, "DAQ:ATCA_1/9/13:-1:-1");
        assert_eq!(parse_str_id(&s).unwrap(), r);
        let r = SignalRef::generic(GenericLocator::alias("a"))
            .at(1, 2)
            .with_units(UnitsTag::Raw);
        assert_eq!(format_str_id(&r).unwrap(), "a:1:2[raw]");
    }

    #[test]
    fn keyword_alias_keeps_prefix() {
        let r = SignalRef::generic(GenericLocator::alias("DAQ")).at(1, 2);
        let s = format_str_id(&r).unwrap();
        assert_eq!(s, "CDB:DAQ:1:2");
        assert_eq!(parse_str_id(&s).unwrap(), r);
    }

    #[test]
    fn invalid_refs_rejected() {
        let bad = [
            SignalRef::generic(GenericLocator::alias("")),
            SignalRef::generic(GenericLocator::alias("123")),
            SignalRef::generic(GenericLocator::alias("a.b")),
            SignalRef::generic(GenericLocator::alias("a:b")),
            SignalRef::channel(Schema::Daq, ChannelKey::new("a", "", "c")),
            SignalRef::channel(Schema::Fs, ChannelKey::new("a", "b/x", "c")),
            SignalRef {
                schema: Schema::Cdb,
                locator: Locator::Channel(ChannelKey::new("a", "b", "c")),
                record_number: 1,
                revision: 1,
                units: UnitsTag::Default,
            },
            SignalRef {
                schema: Schema::Daq,
                locator: Locator::Generic(GenericLocator::alias("x")),
                record_number: 1,
                revision: 1,
                units: UnitsTag::Default,
            },
        ];
        for r in bad {
            assert!(format_str_id(&r).is_err(), "{r:?}");
        }
    }

    #[test]
    fn unknown_schema() {
        assert_eq!(
            parse_str_id("XYZ:ATCA/1/2:-1"),
            Err(ParseError::UnknownSchema("XYZ".into()))
        );
        assert_eq!(
            parse_str_id("MDS:sig"),
            Err(ParseError::UnknownSchema("MDS".into()))
        );
    }

    #[test]
    fn syntax_errors_report_position() {
        assert_eq!(syntax_pos(""), 0);
        assert_eq!(syntax_pos("a:"), 2);
        assert_eq!(syntax_pos("a:1:"), 4);
        assert_eq!(syntax_pos("a:1:2:3"), 5);
        assert_eq!(syntax_pos("a[kA]"), 2);
        assert_eq!(syntax_pos("a[raw"), 5);
        assert_eq!(syntax_pos("DAQ:A/B"), 7);
        assert_eq!(syntax_pos("DAQ:A/B/C/D"), 9);
        assert_eq!(syntax_pos("ATCA_1/9/13:-1"), 0);
        assert_eq!(syntax_pos("a b"), 1);
        assert_eq!(syntax_pos("x.:1"), 2);
        assert_eq!(syntax_pos("a:99999999999999999999"), 2);
        assert_eq!(syntax_pos("a:--1"), 3);
    }

    fn token() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_\\-]{1,10}"
    }

    fn alias() -> impl Strategy<Value = String> {
        "[A-Za-z_][A-Za-z0-9_.\\-]{0,12}".prop_filter("valid alias", |s| {
            GenericLocator::alias(s.as_str()).validate().is_ok()
        })
    }

    pub(crate) fn signal_ref() -> impl Strategy<Value = SignalRef> {
        let generic = prop_oneof![
            alias().prop_map(GenericLocator::alias),
            ("[A-Za-z0-9_]{1,8}", "[A-Za-z0-9_]{1,8}")
                .prop_map(|(n, s)| GenericLocator::name_source(n, s)),
            (0i64..i64::MAX).prop_map(GenericLocator::id),
        ];
        let target = prop_oneof![
            generic.prop_map(|g| (Schema::Cdb, Locator::Generic(g))),
            (
                prop_oneof![Just(Schema::Daq), Just(Schema::Fs)],
                token(),
                token(),
                token()
            )
                .prop_map(|(s, a, b, c)| (s, Locator::Channel(ChannelKey::new(a, b, c)))),
        ];
        (
            target,
            any::<i64>(),
            any::<i64>(),
            prop_oneof![Just(UnitsTag::Default), Just(UnitsTag::Raw)],
        )
            .prop_map(
                |((schema, locator), record_number, revision, units)| SignalRef {
                    schema,
                    locator,
                    record_number,
                    revision,
                    units,
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip(r in signal_ref()) {
            let text = format_str_id(&r).unwrap();
            prop_assert_eq!(parse_str_id(&text).unwrap(), r);
        }

        #[test]
        fn errors_stay_in_bounds(text in "[ -~]{0,24}") {
            if let Err(ParseError::Syntax { position, expected }) = parse_str_id(&text) {
                prop_assert!(position <= text.len());
                prop_assert!(!expected.is_empty());
            }
        }
    }
}
