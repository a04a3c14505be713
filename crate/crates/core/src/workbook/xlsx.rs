//! Best-effort OOXML (`.xlsx`) ingestion.
//!
//! Reads cell values, formulas (as text, with cached results), and raster
//! images anchored through drawing parts. Pivot caches, charts and VBA
//! projects are skipped and listed in the ingestion report.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    parse_a1, serial_to_iso, CellValue, EmbeddedImage, Result, Sheet, Workbook, WorkbookError,
};

/// Result of XLSX ingestion. Dropped features do not fail ingestion.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Complete(Workbook),
    PartialIngest {
        workbook: Workbook,
        warnings: Vec<String>,
    },
}

impl IngestOutcome {
    pub fn workbook(&self) -> &Workbook {
        match self {
            IngestOutcome::Complete(wb) | IngestOutcome::PartialIngest { workbook: wb, .. } => wb,
        }
    }

    pub fn into_workbook(self) -> Workbook {
        match self {
            IngestOutcome::Complete(wb) | IngestOutcome::PartialIngest { workbook: wb, .. } => wb,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            IngestOutcome::Complete(_) => &[],
            IngestOutcome::PartialIngest { warnings, .. } => warnings,
        }
    }
}

type Archive = zip::ZipArchive<std::fs::File>;

pub fn ingest_xlsx(path: &Path) -> Result<IngestOutcome> {
    if !path.exists() {
        return Err(WorkbookError::FileNotFound(path.to_path_buf()));
    }
    let is_xlsx = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("xlsx"));
    if !is_xlsx {
        return Err(WorkbookError::UnsupportedFormat(format!(
            "{} is not an .xlsx file",
            path.display()
        )));
    }
    let bytes = std::fs::read(path)?;
    let file = std::fs::File::open(path)?;
    let mut zip = zip::ZipArchive::new(file)
        .map_err(|e| WorkbookError::UnsupportedFormat(format!("not a zip archive: {e}")))?;

    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("workbook");
    let workbook_id = super::canonical::derive_workbook_id(stem, &bytes);

    let warnings = dropped_features(&zip);

    let wb_xml = read_part(&mut zip, "xl/workbook.xml")?
        .ok_or_else(|| WorkbookError::UnsupportedFormat("missing xl/workbook.xml".into()))?;
    let sheet_entries = parse_workbook_sheets(&wb_xml)?;
    let wb_rels = load_rels(&mut zip, "xl/workbook.xml")?;
    let shared = match read_part(&mut zip, "xl/sharedStrings.xml")? {
        Some(xml) => parse_shared_strings(&xml)?,
        None => Vec::new(),
    };
    let date_styles = match read_part(&mut zip, "xl/styles.xml")? {
        Some(xml) => parse_date_styles(&xml)?,
        None => Vec::new(),
    };

    let mut sheets = Vec::new();
    let mut image_seq = 0usize;
    for (name, rid) in sheet_entries {
        let target = wb_rels
            .get(&rid)
            .ok_or_else(|| malformed(format!("sheet `{name}` has no relationship {rid}")))?;
        let part = resolve_target("xl/workbook.xml", target);
        let xml = read_part(&mut zip, &part)?
            .ok_or_else(|| malformed(format!("missing worksheet part {part}")))?;
        let mut sheet = Sheet::new(name.clone());
        let drawing_rids = parse_sheet_cells(&xml, &mut sheet, &shared, &date_styles)?;

        let sheet_rels = load_rels(&mut zip, &part)?;
        for drid in drawing_rids {
            let Some(dtarget) = sheet_rels.get(&drid) else {
                continue;
            };
            let dpart = resolve_target(&part, dtarget);
            let Some(dxml) = read_part(&mut zip, &dpart)? else {
                continue;
            };
            let drels = load_rels(&mut zip, &dpart)?;
            for pic in parse_drawing(&dxml)? {
                let Some(mtarget) = drels.get(&pic.embed_rid) else {
                    continue;
                };
                let mpart = resolve_target(&dpart, mtarget);
                let Some(payload) = read_part_bytes(&mut zip, &mpart)? else {
                    continue;
                };
                if payload.is_empty() {
                    continue;
                }
                image_seq += 1;
                sheet.add_image(EmbeddedImage {
                    image_id: format!("{workbook_id}-img{image_seq}"),
                    sheet: name.clone(),
                    row: pic.row,
                    col: pic.col,
                    payload,
                    encoding: media_type(&mpart).to_string(),
                    alt_text: pic.alt_text,
                })?;
            }
        }
        sheets.push(sheet);
    }

    let workbook = Workbook::new(workbook_id, sheets)?;
    Ok(if warnings.is_empty() {
        IngestOutcome::Complete(workbook)
    } else {
        IngestOutcome::PartialIngest { workbook, warnings }
    })
}

fn malformed(m: String) -> WorkbookError {
    WorkbookError::MalformedWorkbook(m)
}

fn dropped_features(zip: &Archive) -> Vec<String> {
    let mut out = Vec::new();
    let mut names: Vec<&str> = zip.file_names().collect();
    names.sort_unstable();
    for name in names {
        let lower = name.to_ascii_lowercase();
        if lower.ends_with("vbaproject.bin") {
            out.push(format!("macro module dropped: {name}"));
        } else if lower.starts_with("xl/pivotcache/pivotcachedefinition") && lower.ends_with(".xml") {
            out.push(format!("pivot cache dropped: {name}"));
        } else if lower.starts_with("xl/charts/chart") && lower.ends_with(".xml") {
            out.push(format!("chart dropped: {name}"));
        }
    }
    out
}

fn read_part(zip: &mut Archive, name: &str) -> Result<Option<String>> {
    Ok(read_part_bytes(zip, name)?.map(|b| String::from_utf8_lossy(&b).into_owned()))
}

fn read_part_bytes(zip: &mut Archive, name: &str) -> Result<Option<Vec<u8>>> {
    let mut file = match zip.by_name(name) {
        Ok(f) => f,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(malformed(format!("{name}: {e}"))),
    };
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    Ok(Some(buf))
}

/// `xl/worksheets/sheet1.xml` → `xl/worksheets/_rels/sheet1.xml.rels`
fn rels_path(part: &str) -> String {
    match part.rsplit_once('/') {
        Some((dir, file)) => format!("{dir}/_rels/{file}.rels"),
        None => format!("_rels/{part}.rels"),
    }
}

fn load_rels(zip: &mut Archive, part: &str) -> Result<HashMap<String, String>> {
    let Some(xml) = read_part(zip, &rels_path(part))? else {
        return Ok(HashMap::new());
    };
    let mut map = HashMap::new();
    let mut reader = Reader::from_str(&xml);
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) | Event::Empty(e) if e.local_name().as_ref() == b"Relationship" => {
                if let (Some(id), Some(target)) = (attr(&e, b"Id"), attr(&e, b"Target")) {
                    map.insert(id, target);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(map)
}

/// Resolves a relationship target relative to the part that owns it.
fn resolve_target(owner: &str, target: &str) -> String {
    if let Some(abs) = target.strip_prefix('/') {
        return abs.to_string();
    }
    let mut parts: Vec<&str> = owner.split('/').collect();
    parts.pop();
    for seg in target.split('/') {
        match seg {
            ".." => {
                parts.pop();
            }
            "." | "" => {}
            s => parts.push(s),
        }
    }
    parts.join("/")
}

fn media_type(part: &str) -> &'static str {
    let ext = part.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "bmp" => "image/bmp",
        "tif" | "tiff" => "image/tiff",
        "emf" => "image/emf",
        "wmf" => "image/wmf",
        "svg" => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn xml_err(e: quick_xml::Error) -> WorkbookError {
    malformed(format!("xml: {e}"))
}

fn attr(e: &BytesStart<'_>, local: &[u8]) -> Option<String> {
    e.attributes().flatten().find_map(|a| {
        (a.key.local_name().as_ref() == local)
            .then(|| a.unescape_value().map(|v| v.into_owned()).ok())
            .flatten()
    })
}

fn parse_workbook_sheets(xml: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut reader = Reader::from_str(xml);
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) | Event::Empty(e) if e.local_name().as_ref() == b"sheet" => {
                let name = attr(&e, b"name").ok_or_else(|| malformed("sheet without name".into()))?;
                let rid = attr(&e, b"id").ok_or_else(|| malformed(format!("sheet `{name}` without r:id")))?;
                out.push((name, rid));
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

fn parse_shared_strings(xml: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut reader = Reader::from_str(xml);
    let mut current: Option<String> = None;
    let mut in_t = false;
    let mut in_rph = false;
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) => match e.local_name().as_ref() {
                b"si" => current = Some(String::new()),
                b"t" => in_t = true,
                b"rPh" => in_rph = true,
                _ => {}
            },
            Event::Empty(e) if e.local_name().as_ref() == b"si" => out.push(String::new()),
            Event::Text(t) if in_t && !in_rph => {
                if let Some(s) = current.as_mut() {
                    s.push_str(&t.unescape().map_err(xml_err)?);
                }
            }
            Event::End(e) => match e.local_name().as_ref() {
                b"si" => out.push(current.take().unwrap_or_default()),
                b"t" => in_t = false,
                b"rPh" => in_rph = false,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

/// Indexes into `cellXfs` whose number format renders as a date.
fn parse_date_styles(xml: &str) -> Result<Vec<bool>> {
    let mut custom: HashMap<u32, bool> = HashMap::new();
    let mut xfs = Vec::new();
    let mut in_cell_xfs = false;
    let mut reader = Reader::from_str(xml);
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) | Event::Empty(e) => match e.local_name().as_ref() {
                b"numFmt" => {
                    if let (Some(id), Some(code)) = (attr(&e, b"numFmtId"), attr(&e, b"formatCode")) {
                        if let Ok(id) = id.parse() {
                            custom.insert(id, is_date_format(&code));
                        }
                    }
                }
                b"cellXfs" => in_cell_xfs = true,
                b"xf" if in_cell_xfs => {
                    let id: u32 = attr(&e, b"numFmtId").and_then(|v| v.parse().ok()).unwrap_or(0);
                    let builtin_date = matches!(id, 14..=22 | 45..=47);
                    xfs.push(builtin_date || custom.get(&id).copied().unwrap_or(false));
                }
                _ => {}
            },
            Event::End(e) if e.local_name().as_ref() == b"cellXfs" => in_cell_xfs = false,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(xfs)
}

fn is_date_format(code: &str) -> bool {
    // strip quoted literals and bracketed sections before looking for date tokens
    let mut stripped = String::new();
    let mut in_quote = false;
    let mut in_bracket = false;
    for ch in code.chars() {
        match ch {
            '"' => in_quote = !in_quote,
            '[' if !in_quote => in_bracket = true,
            ']' if !in_quote => in_bracket = false,
            c if !in_quote && !in_bracket => stripped.push(c.to_ascii_lowercase()),
            _ => {}
        }
    }
    stripped.contains('y') || stripped.contains('d') || (stripped.contains('m') && !stripped.contains('0'))
}

#[derive(Default)]
struct PendingCell {
    row: u32,
    col: u32,
    cell_type: String,
    style: usize,
    value: Option<String>,
    formula: Option<String>,
    inline: String,
}

/// Fills `sheet` with cells; returns relationship ids of `<drawing>` parts.
fn parse_sheet_cells(
    xml: &str,
    sheet: &mut Sheet,
    shared: &[String],
    date_styles: &[bool],
) -> Result<Vec<String>> {
    let mut drawings = Vec::new();
    let mut reader = Reader::from_str(xml);
    let mut cell: Option<PendingCell> = None;
    let mut text_target: Option<&'static str> = None;
    let mut next_row = 1u32;
    let mut next_col = 1u32;
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) => match e.local_name().as_ref() {
                b"row" => {
                    if let Some(r) = attr(&e, b"r").and_then(|v| v.parse().ok()) {
                        next_row = r;
                    }
                    next_col = 1;
                }
                b"c" => cell = Some(start_cell(&e, next_row, next_col)?),
                b"v" => text_target = Some("v"),
                b"f" => text_target = Some("f"),
                b"t" => text_target = Some("t"),
                _ => {}
            },
            Event::Empty(e) => match e.local_name().as_ref() {
                b"c" => {
                    let c = start_cell(&e, next_row, next_col)?;
                    next_col = c.col + 1;
                }
                b"row" => {
                    if let Some(r) = attr(&e, b"r").and_then(|v: String| v.parse::<u32>().ok()) {
                        next_row = r + 1;
                    }
                }
                b"drawing" => {
                    if let Some(id) = attr(&e, b"id") {
                        drawings.push(id);
                    }
                }
                _ => {}
            },
            Event::Text(t) => {
                if let (Some(target), Some(c)) = (text_target, cell.as_mut()) {
                    let text = t.unescape().map_err(xml_err)?;
                    match target {
                        "v" => c.value.get_or_insert_with(String::new).push_str(&text),
                        "f" => c.formula.get_or_insert_with(String::new).push_str(&text),
                        _ => c.inline.push_str(&text),
                    }
                }
            }
            Event::End(e) => match e.local_name().as_ref() {
                b"v" | b"f" | b"t" => text_target = None,
                b"c" => {
                    if let Some(c) = cell.take() {
                        next_col = c.col + 1;
                        let (row, col) = (c.row, c.col);
                        let value = finish_cell(c, shared, date_styles)?;
                        sheet.set(row, col, value)?;
                    }
                }
                b"row" => {
                    next_row += 1;
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(drawings)
}

fn start_cell(e: &BytesStart<'_>, row: u32, col: u32) -> Result<PendingCell> {
    let (row, col) = match attr(e, b"r") {
        Some(r) => parse_a1(&r)?,
        None => (row, col),
    };
    Ok(PendingCell {
        row,
        col,
        cell_type: attr(e, b"t").unwrap_or_default(),
        style: attr(e, b"s").and_then(|s| s.parse().ok()).unwrap_or(0),
        ..Default::default()
    })
}

fn finish_cell(c: PendingCell, shared: &[String], date_styles: &[bool]) -> Result<CellValue> {
    let v = c.value.unwrap_or_default();
    let cached = match c.cell_type.as_str() {
        "s" => {
            let idx: usize = v
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad shared string index `{v}`")))?;
            let s = shared
                .get(idx)
                .ok_or_else(|| malformed(format!("shared string {idx} out of range")))?;
            CellValue::text(s.clone())
        }
        "inlineStr" => CellValue::text(c.inline),
        "str" => CellValue::text(v),
        "b" => CellValue::boolean(v.trim() == "1"),
        "e" => {
            let mut e = CellValue::text(v.clone());
            e.eval_error = Some(v);
            e
        }
        _ if v.trim().is_empty() => CellValue::empty(),
        _ => {
            let n: f64 = v
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad numeric cell value `{v}`")))?;
            if !n.is_finite() {
                return Err(malformed(format!("non-finite numeric value `{v}`")));
            }
            match date_styles.get(c.style) {
                Some(true) => match serial_to_iso(n) {
                    Some(iso) => CellValue::datetime(iso, n),
                    None => CellValue::number_with_raw(v.trim(), n),
                },
                _ => CellValue::number_with_raw(v.trim(), n),
            }
        }
    };
    Ok(match c.formula {
        Some(f) if !f.trim().is_empty() => {
            let mut out = CellValue::formula(format!("={}", f.trim()));
            if c.cell_type == "e" {
                out.raw = cached.raw;
                out.eval_error = cached.eval_error;
            } else if cached.kind != super::CellKind::Empty {
                out.raw = cached.raw;
                out.numeric = cached.numeric;
            }
            out
        }
        _ => cached,
    })
}

struct Picture {
    row: u32,
    col: u32,
    embed_rid: String,
    alt_text: String,
}

/// Extracts anchored pictures; anchors are 0-based in the drawing XML.
fn parse_drawing(xml: &str) -> Result<Vec<Picture>> {
    let mut out = Vec::new();
    let mut reader = Reader::from_str(xml);
    let mut in_anchor = false;
    let mut in_from = false;
    let mut in_pic = false;
    let mut field: Option<&'static str> = None;
    let (mut row, mut col) = (0u32, 0u32);
    let mut embed: Option<String> = None;
    let mut alt = String::new();
    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) => match e.local_name().as_ref() {
                b"twoCellAnchor" | b"oneCellAnchor" | b"absoluteAnchor" => {
                    in_anchor = true;
                    in_pic = false;
                    row = 0;
                    col = 0;
                    embed = None;
                    alt.clear();
                }
                b"from" if in_anchor => in_from = true,
                b"row" if in_from => field = Some("row"),
                b"col" if in_from => field = Some("col"),
                b"pic" if in_anchor => in_pic = true,
                b"cNvPr" if in_pic => alt = cnvpr_alt(&e),
                b"blip" if in_pic => embed = attr(&e, b"embed"),
                _ => {}
            },
            Event::Empty(e) => match e.local_name().as_ref() {
                b"cNvPr" if in_pic => alt = cnvpr_alt(&e),
                b"blip" if in_pic => embed = attr(&e, b"embed"),
                _ => {}
            },
            Event::Text(t) => {
                if let Some(f) = field {
                    let n: u32 = t.unescape().map_err(xml_err)?.trim().parse().unwrap_or(0);
                    if f == "row" {
                        row = n;
                    } else {
                        col = n;
                    }
                }
            }
            Event::End(e) => match e.local_name().as_ref() {
                b"row" | b"col" => field = None,
                b"from" => in_from = false,
                b"twoCellAnchor" | b"oneCellAnchor" | b"absoluteAnchor" => {
                    if in_pic {
                        if let Some(rid) = embed.take() {
                            out.push(Picture {
                                row: row + 1,
                                col: col + 1,
                                embed_rid: rid,
                                alt_text: std::mem::take(&mut alt),
                            });
                        }
                    }
                    in_anchor = false;
                    in_pic = false;
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

fn cnvpr_alt(e: &BytesStart<'_>) -> String {
    attr(e, b"descr")
        .filter(|s| !s.is_empty())
        .or_else(|| attr(e, b"title"))
        .unwrap_or_default()
}
