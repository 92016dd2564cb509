use std::fmt::Write as _;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

/// One `<object>` entry, VOC 1-based inclusive pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocObject {
    pub name: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocRecord {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<VocObject>,
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(tag))
}

fn text_of<'a>(node: Node<'a, '_>, tag: &str, ctx: &str) -> Result<&'a str> {
    child(node, tag)
        .and_then(|n| n.text())
        .map(str::trim)
        .ok_or_else(|| Error::Schema(format!("{ctx}: missing <{tag}>")))
}

fn number<T: std::str::FromStr>(node: Node<'_, '_>, tag: &str, ctx: &str) -> Result<T> {
    let t = text_of(node, tag, ctx)?;
    t.parse()
        .map_err(|_| Error::Schema(format!("{ctx}: <{tag}> is not a number: {t:?}")))
}

/// Parses one Pascal-VOC annotation document.
pub fn parse_voc_annotation(xml_text: &str) -> Result<VocRecord> {
    let doc = Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        Error::XmlParse {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::Schema(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let filename = text_of(root, "filename", "annotation")?.to_string();
    let size = child(root, "size").ok_or_else(|| Error::Schema("annotation: missing <size>".into()))?;
    let width: u32 = number(size, "width", "size")?;
    let height: u32 = number(size, "height", "size")?;
    let depth: u32 = match child(size, "depth") {
        Some(_) => number(size, "depth", "size")?,
        None => 3,
    };
    if width == 0 || height == 0 {
        return Err(Error::Schema("size: width and height must be positive".into()));
    }

    let mut objects = Vec::new();
    for (i, obj) in root.children().filter(|n| n.has_tag_name("object")).enumerate() {
        let ctx = format!("object {}", i + 1);
        let name = text_of(obj, "name", &ctx)?.to_string();
        let difficult = match child(obj, "difficult").and_then(|n| n.text()) {
            Some(t) => match t.trim() {
                "0" | "" => false,
                "1" => true,
                other => return Err(Error::Schema(format!("{ctx}: bad <difficult> {other:?}"))),
            },
            None => false,
        };
        let bb = child(obj, "bndbox").ok_or_else(|| Error::Schema(format!("{ctx}: missing <bndbox>")))?;
        let bctx = format!("{ctx} bndbox");
        let (xmin, ymin, xmax, ymax) = (
            number::<f64>(bb, "xmin", &bctx)?,
            number::<f64>(bb, "ymin", &bctx)?,
            number::<f64>(bb, "xmax", &bctx)?,
            number::<f64>(bb, "ymax", &bctx)?,
        );
        if !(1.0 <= xmin && xmin < xmax && xmax <= width as f64) {
            return Err(Error::Schema(format!(
                "{bctx}: need 1 <= xmin < xmax <= {width}, got {xmin}..{xmax}"
            )));
        }
        if !(1.0 <= ymin && ymin < ymax && ymax <= height as f64) {
            return Err(Error::Schema(format!(
                "{bctx}: need 1 <= ymin < ymax <= {height}, got {ymin}..{ymax}"
            )));
        }
        objects.push(VocObject {
            name,
            xmin,
            ymin,
            xmax,
            ymax,
            difficult,
        });
    }
    Ok(VocRecord {
        filename,
        width,
        height,
        depth,
        objects,
    })
}

impl VocObject {
    /// Normalized box: pixel `p` (1-based) spans `[p-1, p]`.
    pub fn normalized(&self, width: u32, height: u32) -> BBox {
        BBox::new(
            (self.xmin - 1.0) / width as f64,
            (self.ymin - 1.0) / height as f64,
            self.xmax / width as f64,
            self.ymax / height as f64,
        )
    }

    /// Inverse of [`VocObject::normalized`].
    pub fn from_normalized(name: &str, b: &BBox, width: u32, height: u32, difficult: bool) -> Self {
        Self {
            name: name.to_string(),
            xmin: b.xmin * width as f64 + 1.0,
            ymin: b.ymin * height as f64 + 1.0,
            xmax: b.xmax * width as f64,
            ymax: b.ymax * height as f64,
            difficult,
        }
    }
}

impl VocRecord {
    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "<annotation>");
        let _ = writeln!(s, "  <filename>{}</filename>", escape(&self.filename));
        let _ = writeln!(
            s,
            "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>{}</depth>\n  </size>",
            self.width, self.height, self.depth
        );
        for o in &self.objects {
            let _ = writeln!(s, "  <object>");
            let _ = writeln!(s, "    <name>{}</name>", escape(&o.name));
            let _ = writeln!(s, "    <difficult>{}</difficult>", u8::from(o.difficult));
            let _ = writeln!(
                s,
                "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>",
                o.xmin, o.ymin, o.xmax, o.ymax
            );
            let _ = writeln!(s, "  </object>");
        }
        let _ = writeln!(s, "</annotation>");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
