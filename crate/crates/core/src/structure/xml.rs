//! Versioned XML serialization of [`AnnotationStructure`].
//!
//! ```xml
//! <corpusStructure version="1">
//!   <metadata>
//!     <attribute object="Communication" id="genre" datatype="Text" optional="true"/>
//!   </metadata>
//!   <levels>
//!     <level id="syll" kind="Interval">
//!       <attribute id="prom" datatype="Text" optional="true">
//!         <vocabulary><item>P</item><item>0</item></vocabulary>
//!       </attribute>
//!     </level>
//!   </levels>
//!   <relations>
//!     <relation kind="Hierarchy" parent="syll" child="phones"/>
//!   </relations>
//! </corpusStructure>
//! ```
//!
//! `name` attributes are optional and default to the id.

use quick_xml::events::attributes::Attributes;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer};

use super::{
    AnnotationAttributeDef, AnnotationLevelDef, AnnotationStructure, DataType, LevelKind,
    LevelRelation, MetadataAttribute, MetadataObject, RelationKind, StructureError,
};

pub const STRUCTURE_VERSION: &str = "1";

struct Node {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
    text: String,
    offset: usize,
}

struct Located<'a> {
    src: &'a str,
}

impl Located<'_> {
    fn error(&self, offset: usize, message: impl Into<String>) -> StructureError {
        let mut end = offset.min(self.src.len());
        while !self.src.is_char_boundary(end) {
            end -= 1;
        }
        let before = &self.src[..end];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        StructureError::ParseError {
            line,
            column,
            message: message.into(),
        }
    }
}

fn read_attrs(loc: &Located, attrs: Attributes, offset: usize) -> Result<Vec<(String, String)>, StructureError> {
    let mut out = Vec::new();
    for attr in attrs {
        let attr = attr.map_err(|e| loc.error(offset, e.to_string()))?;
        let key = String::from_utf8(attr.key.as_ref().to_vec())
            .map_err(|_| loc.error(offset, "attribute name is not UTF-8"))?;
        let value = attr
            .unescape_value()
            .map_err(|e| loc.error(offset, e.to_string()))?
            .into_owned();
        out.push((key, value));
    }
    Ok(out)
}

fn parse_tree(src: &str) -> Result<Node, StructureError> {
    let loc = Located { src };
    let mut reader = Reader::from_str(src);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Node> = Vec::new();
    let mut root: Option<Node> = None;
    loop {
        let pos = reader.buffer_position() as usize;
        let offset = pos + src[pos.min(src.len())..].len() - src[pos.min(src.len())..].trim_start().len();
        let event = reader
            .read_event()
            .map_err(|e| loc.error(reader.error_position() as usize, e.to_string()))?;
        match event {
            Event::Start(e) | Event::Empty(e) if root.is_some() => {
                let _ = e;
                return Err(loc.error(offset, "content after the root element"));
            }
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let attrs = read_attrs(&loc, e.attributes(), offset)?;
                stack.push(Node {
                    name,
                    attrs,
                    children: Vec::new(),
                    text: String::new(),
                    offset,
                });
            }
            Event::Empty(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let attrs = read_attrs(&loc, e.attributes(), offset)?;
                let node = Node {
                    name,
                    attrs,
                    children: Vec::new(),
                    text: String::new(),
                    offset,
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::End(_) => {
                let node = stack.pop().ok_or_else(|| loc.error(offset, "unbalanced end tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| loc.error(offset, e.to_string()))?;
                match stack.last_mut() {
                    Some(node) => node.text.push_str(&text),
                    None if text.trim().is_empty() => {}
                    None => return Err(loc.error(offset, "text outside the root element")),
                }
            }
            Event::CData(t) => {
                if let Some(node) = stack.last_mut() {
                    node.text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(loc.error(src.len(), "unexpected end of file"));
    }
    root.ok_or_else(|| loc.error(0, "missing root element"))
}

impl Node {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn required(&self, loc: &Located, key: &str) -> Result<&str, StructureError> {
        self.attr(key)
            .ok_or_else(|| loc.error(self.offset, format!("<{}> is missing attribute `{key}`", self.name)))
    }

    fn expect_children<'n>(&'n self, loc: &Located, name: &str) -> Result<Vec<&'n Node>, StructureError> {
        self.children
            .iter()
            .map(|c| {
                if c.name == name {
                    Ok(c)
                } else {
                    Err(loc.error(c.offset, format!("unexpected <{}> inside <{}>", c.name, self.name)))
                }
            })
            .collect()
    }
}

fn token<T>(loc: &Located, node: &Node, key: &str, parse: fn(&str) -> Option<T>) -> Result<T, StructureError> {
    let raw = node.required(loc, key)?;
    parse(raw).ok_or_else(|| loc.error(node.offset, format!("unknown {key} {raw:?}")))
}

fn bool_attr(loc: &Located, node: &Node, key: &str, default: bool) -> Result<bool, StructureError> {
    match node.attr(key) {
        None => Ok(default),
        Some("true") | Some("1") => Ok(true),
        Some("false") | Some("0") => Ok(false),
        Some(other) => Err(loc.error(node.offset, format!("invalid boolean {other:?} for `{key}`"))),
    }
}

/// Parses a structure file.
pub fn read_structure(bytes: &[u8]) -> Result<AnnotationStructure, StructureError> {
    let src = std::str::from_utf8(bytes).map_err(|e| {
        let loc = Located {
            src: std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or(""),
        };
        loc.error(e.valid_up_to(), "input is not valid UTF-8")
    })?;
    let src = src.strip_prefix('\u{feff}').unwrap_or(src);
    let loc = Located { src };
    let root = parse_tree(src)?;
    if root.name != "corpusStructure" {
        return Err(loc.error(root.offset, format!("expected <corpusStructure>, found <{}>", root.name)));
    }
    let version = root.required(&loc, "version")?;
    if version != STRUCTURE_VERSION {
        return Err(StructureError::SchemaVersionUnsupported(version.to_string()));
    }

    let mut structure = AnnotationStructure::new();
    for section in &root.children {
        match section.name.as_str() {
            "metadata" => {
                for node in section.expect_children(&loc, "attribute")? {
                    let id = node.required(&loc, "id")?.to_string();
                    structure.metadata.push(MetadataAttribute {
                        name: node.attr("name").unwrap_or(&id).to_string(),
                        object: token(&loc, node, "object", MetadataObject::from_token)?,
                        datatype: token(&loc, node, "datatype", DataType::from_token)?,
                        optional: bool_attr(&loc, node, "optional", true)?,
                        id,
                    });
                }
            }
            "levels" => {
                for node in section.expect_children(&loc, "level")? {
                    let id = node.required(&loc, "id")?.to_string();
                    let mut level = AnnotationLevelDef {
                        name: node.attr("name").unwrap_or(&id).to_string(),
                        kind: token(&loc, node, "kind", LevelKind::from_token)?,
                        attributes: Vec::new(),
                        id,
                    };
                    for attr in node.expect_children(&loc, "attribute")? {
                        level.attributes.push(read_level_attribute(&loc, attr)?);
                    }
                    structure.levels.push(level);
                }
            }
            "relations" => {
                for node in section.expect_children(&loc, "relation")? {
                    structure.relations.push(LevelRelation {
                        kind: token(&loc, node, "kind", RelationKind::from_token)?,
                        parent: node.required(&loc, "parent")?.to_string(),
                        child: node.required(&loc, "child")?.to_string(),
                    });
                }
            }
            other => {
                return Err(loc.error(section.offset, format!("unexpected section <{other}>")));
            }
        }
    }
    Ok(structure)
}

fn read_level_attribute(loc: &Located, node: &Node) -> Result<AnnotationAttributeDef, StructureError> {
    let id = node.required(loc, "id")?.to_string();
    let mut vocabulary = None;
    for child in &node.children {
        if child.name != "vocabulary" {
            return Err(loc.error(child.offset, format!("unexpected <{}> inside <attribute>", child.name)));
        }
        let items = child
            .expect_children(loc, "item")?
            .into_iter()
            .map(|item| item.text.clone())
            .collect();
        vocabulary = Some(items);
    }
    Ok(AnnotationAttributeDef {
        name: node.attr("name").unwrap_or(&id).to_string(),
        datatype: token(loc, node, "datatype", DataType::from_token)?,
        optional: bool_attr(loc, node, "optional", true)?,
        vocabulary,
        id,
    })
}

/// Serializes a structure as an indented UTF-8 XML document.
pub fn write_structure(structure: &AnnotationStructure) -> Vec<u8> {
    let mut writer = Writer::new_with_indent(Vec::new(), b' ', 2);
    // Writing into a Vec cannot fail.
    let mut emit = |event: Event| writer.write_event(event).expect("in-memory write");
    emit(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)));
    emit(Event::Start(
        BytesStart::new("corpusStructure").with_attributes([("version", STRUCTURE_VERSION)]),
    ));

    emit(Event::Start(BytesStart::new("metadata")));
    for m in &structure.metadata {
        emit(Event::Empty(BytesStart::new("attribute").with_attributes([
            ("object", m.object.as_str()),
            ("id", m.id.as_str()),
            ("name", m.name.as_str()),
            ("datatype", m.datatype.as_str()),
            ("optional", bool_str(m.optional)),
        ])));
    }
    emit(Event::End(BytesEnd::new("metadata")));

    emit(Event::Start(BytesStart::new("levels")));
    for level in &structure.levels {
        let start = BytesStart::new("level").with_attributes([
            ("id", level.id.as_str()),
            ("name", level.name.as_str()),
            ("kind", level.kind.as_str()),
        ]);
        if level.attributes.is_empty() {
            emit(Event::Empty(start));
            continue;
        }
        emit(Event::Start(start));
        for attr in &level.attributes {
            let start = BytesStart::new("attribute").with_attributes([
                ("id", attr.id.as_str()),
                ("name", attr.name.as_str()),
                ("datatype", attr.datatype.as_str()),
                ("optional", bool_str(attr.optional)),
            ]);
            match &attr.vocabulary {
                None => emit(Event::Empty(start)),
                Some(items) => {
                    emit(Event::Start(start));
                    emit(Event::Start(BytesStart::new("vocabulary")));
                    for item in items {
                        emit(Event::Start(BytesStart::new("item")));
                        emit(Event::Text(BytesText::new(item)));
                        emit(Event::End(BytesEnd::new("item")));
                    }
                    emit(Event::End(BytesEnd::new("vocabulary")));
                    emit(Event::End(BytesEnd::new("attribute")));
                }
            }
        }
        emit(Event::End(BytesEnd::new("level")));
    }
    emit(Event::End(BytesEnd::new("levels")));

    emit(Event::Start(BytesStart::new("relations")));
    for rel in &structure.relations {
        emit(Event::Empty(BytesStart::new("relation").with_attributes([
            ("kind", rel.kind.as_str()),
            ("parent", rel.parent.as_str()),
            ("child", rel.child.as_str()),
        ])));
    }
    emit(Event::End(BytesEnd::new("relations")));
    emit(Event::End(BytesEnd::new("corpusStructure")));
    let mut out = writer.into_inner();
    out.push(b'\n');
    out
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}
