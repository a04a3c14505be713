use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use quick_xml::escape::escape;
use zip::write::SimpleFileOptions;

use super::{a1::a1, CellKind, CellValue, Result, Workbook, WorkbookError};

const NS_MAIN: &str = "http://schemas.openxmlformats.org/spreadsheetml/2006/main";
const NS_REL: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships";
const NS_PKG_REL: &str = "http://schemas.openxmlformats.org/package/2006/relationships";
const REL_SHEET: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet";
const REL_STYLES: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/styles";
const REL_DRAWING: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/drawing";
const REL_IMAGE: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/image";

/// Writes a minimal OOXML package: inline strings, cached formula values,
/// one date style, and pictures anchored at their cells. Written atomically.
pub fn write_xlsx(wb: &Workbook, path: &Path) -> Result<()> {
    let bytes = to_xlsx_bytes(wb)?;
    crate::util::atomic_write(path, &bytes)?;
    Ok(())
}

fn zip_err(e: zip::result::ZipError) -> WorkbookError {
    WorkbookError::Io(std::io::Error::other(e))
}

pub fn to_xlsx_bytes(wb: &Workbook) -> Result<Vec<u8>> {
    let mut zip = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    let put = |zip: &mut zip::ZipWriter<std::io::Cursor<Vec<u8>>>, name: &str, data: &[u8]| -> Result<()> {
        zip.start_file(name, opts).map_err(zip_err)?;
        zip.write_all(data)?;
        Ok(())
    };

    let mut content_types = String::from(
        r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types"><Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/><Default Extension="xml" ContentType="application/xml"/>"#,
    );
    let mut extensions: Vec<(String, String)> = Vec::new();
    for img in wb.sheets.iter().flat_map(|s| &s.images) {
        let ext = extension_for(&img.encoding).to_string();
        if !extensions.iter().any(|(e, _)| *e == ext) {
            extensions.push((ext, img.encoding.clone()));
        }
    }
    for (ext, ct) in &extensions {
        let _ = write!(content_types, r#"<Default Extension="{ext}" ContentType="{}"/>"#, escape(ct.as_str()));
    }
    content_types.push_str(r#"<Override PartName="/xl/workbook.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"/><Override PartName="/xl/styles.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.styles+xml"/>"#);
    for (i, s) in wb.sheets.iter().enumerate() {
        let _ = write!(content_types, r#"<Override PartName="/xl/worksheets/sheet{}.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml"/>"#, i + 1);
        if !s.images.is_empty() {
            let _ = write!(content_types, r#"<Override PartName="/xl/drawings/drawing{}.xml" ContentType="application/vnd.openxmlformats-officedocument.drawing+xml"/>"#, i + 1);
        }
    }
    content_types.push_str("</Types>");
    put(&mut zip, "[Content_Types].xml", content_types.as_bytes())?;

    put(
        &mut zip,
        "_rels/.rels",
        format!(r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="{NS_PKG_REL}"><Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="xl/workbook.xml"/></Relationships>"#)
        .as_bytes(),
    )?;

    let mut workbook_xml = format!(
        r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<workbook xmlns="{NS_MAIN}" xmlns:r="{NS_REL}"><sheets>"#
    );
    let mut wb_rels = format!(r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="{NS_PKG_REL}">"#);
    for (i, s) in wb.sheets.iter().enumerate() {
        let n = i + 1;
        let _ = write!(workbook_xml, r#"<sheet name="{}" sheetId="{n}" r:id="rId{n}"/>"#, escape(s.name.as_str()));
        let _ = write!(wb_rels, r#"<Relationship Id="rId{n}" Type="{REL_SHEET}" Target="worksheets/sheet{n}.xml"/>"#);
    }
    let styles_rid = wb.sheets.len() + 1;
    let _ = write!(wb_rels, r#"<Relationship Id="rId{styles_rid}" Type="{REL_STYLES}" Target="styles.xml"/></Relationships>"#);
    workbook_xml.push_str("</sheets></workbook>");
    put(&mut zip, "xl/workbook.xml", workbook_xml.as_bytes())?;
    put(&mut zip, "xl/_rels/workbook.xml.rels", wb_rels.as_bytes())?;
    // xf 0 general, xf 1 date-time (numFmtId 22)
    put(
        &mut zip,
        "xl/styles.xml",
        format!(r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<styleSheet xmlns="{NS_MAIN}"><fonts count="1"><font/></fonts><fills count="1"><fill/></fills><borders count="1"><border/></borders><cellStyleXfs count="1"><xf numFmtId="0"/></cellStyleXfs><cellXfs count="2"><xf numFmtId="0" xfId="0"/><xf numFmtId="22" xfId="0" applyNumberFormat="1"/></cellXfs></styleSheet>"#)
        .as_bytes(),
    )?;

    let mut media_seq = 0usize;
    for (i, sheet) in wb.sheets.iter().enumerate() {
        let n = i + 1;
        let mut xml = format!(
            r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<worksheet xmlns="{NS_MAIN}" xmlns:r="{NS_REL}"><sheetData>"#
        );
        let mut current_row = 0u32;
        for ((r, c), v) in sheet.cells() {
            if r != current_row {
                if current_row != 0 {
                    xml.push_str("</row>");
                }
                let _ = write!(xml, r#"<row r="{r}">"#);
                current_row = r;
            }
            xml.push_str(&cell_xml(&a1(r, c), v));
        }
        if current_row != 0 {
            xml.push_str("</row>");
        }
        xml.push_str("</sheetData>");
        if !sheet.images.is_empty() {
            xml.push_str(r#"<drawing r:id="rId1"/>"#);
        }
        xml.push_str("</worksheet>");
        put(&mut zip, &format!("xl/worksheets/sheet{n}.xml"), xml.as_bytes())?;

        if sheet.images.is_empty() {
            continue;
        }
        put(
            &mut zip,
            &format!("xl/worksheets/_rels/sheet{n}.xml.rels"),
            format!(r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="{NS_PKG_REL}"><Relationship Id="rId1" Type="{REL_DRAWING}" Target="../drawings/drawing{n}.xml"/></Relationships>"#)
            .as_bytes(),
        )?;
        let mut drawing = String::from(
            r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<xdr:wsDr xmlns:xdr="http://schemas.openxmlformats.org/drawingml/2006/spreadsheetDrawing" xmlns:a="http://schemas.openxmlformats.org/drawingml/2006/main" xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships">"#,
        );
        let mut drels = format!(r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="{NS_PKG_REL}">"#);
        for (j, img) in sheet.images.iter().enumerate() {
            media_seq += 1;
            let rid = j + 1;
            let media = format!("image{media_seq}.{}", extension_for(&img.encoding));
            let _ = write!(drels, r#"<Relationship Id="rId{rid}" Type="{REL_IMAGE}" Target="../media/{media}"/>"#);
            let _ = write!(
                drawing,
                r#"<xdr:oneCellAnchor><xdr:from><xdr:col>{}</xdr:col><xdr:colOff>0</xdr:colOff><xdr:row>{}</xdr:row><xdr:rowOff>0</xdr:rowOff></xdr:from><xdr:ext cx="914400" cy="914400"/><xdr:pic><xdr:nvPicPr><xdr:cNvPr id="{}" name="Picture {rid}" descr="{}"/><xdr:cNvPicPr/></xdr:nvPicPr><xdr:blipFill><a:blip r:embed="rId{rid}"/><a:stretch><a:fillRect/></a:stretch></xdr:blipFill><xdr:spPr><a:prstGeom prst="rect"><a:avLst/></a:prstGeom></xdr:spPr></xdr:pic><xdr:clientData/></xdr:oneCellAnchor>"#,
                img.col - 1,
                img.row - 1,
                rid + 1,
                escape(img.alt_text.as_str())
            );
            put(&mut zip, &format!("xl/media/{media}"), &img.payload)?;
        }
        drawing.push_str("</xdr:wsDr>");
        drels.push_str("</Relationships>");
        put(&mut zip, &format!("xl/drawings/drawing{n}.xml"), drawing.as_bytes())?;
        put(&mut zip, &format!("xl/drawings/_rels/drawing{n}.xml.rels"), drels.as_bytes())?;
    }

    let cursor = zip.finish().map_err(zip_err)?;
    Ok(cursor.into_inner())
}

fn extension_for(encoding: &str) -> &'static str {
    match encoding {
        "image/png" => "png",
        "image/jpeg" => "jpeg",
        "image/gif" => "gif",
        "image/bmp" => "bmp",
        "image/tiff" => "tiff",
        "image/svg+xml" => "svg",
        _ => "bin",
    }
}

fn cell_xml(r: &str, v: &CellValue) -> String {
    let text = |s: &str| escape(s).into_owned();
    match v.kind {
        CellKind::Empty => String::new(),
        CellKind::Text => format!(r#"<c r="{r}" t="inlineStr"><is><t xml:space="preserve">{}</t></is></c>"#, text(&v.raw)),
        CellKind::Number => format!(r#"<c r="{r}"><v>{}</v></c>"#, v.numeric.unwrap_or(0.0)),
        CellKind::Boolean => {
            let b = v.numeric.map(|n| n != 0.0).unwrap_or(v.raw.eq_ignore_ascii_case("true"));
            format!(r#"<c r="{r}" t="b"><v>{}</v></c>"#, u8::from(b))
        }
        CellKind::Datetime => match v.numeric {
            Some(n) => format!(r#"<c r="{r}" s="1"><v>{n}</v></c>"#),
            None => format!(r#"<c r="{r}" t="inlineStr"><is><t>{}</t></is></c>"#, text(&v.raw)),
        },
        CellKind::Formula => {
            let f = v.formula_text.as_deref().unwrap_or("=");
            let f = text(f.strip_prefix('=').unwrap_or(f));
            if let Some(err) = &v.eval_error {
                let code = match err.split([':', ' ']).next() {
                    Some(c) if c.starts_with('#') => c,
                    _ => "#VALUE!",
                };
                format!(r#"<c r="{r}" t="e"><f>{f}</f><v>{}</v></c>"#, text(code))
            } else if let Some(n) = v.numeric {
                format!(r#"<c r="{r}"><f>{f}</f><v>{n}</v></c>"#)
            } else if v.raw.is_empty() {
                format!(r#"<c r="{r}"><f>{f}</f></c>"#)
            } else {
                format!(r#"<c r="{r}" t="str"><f>{f}</f><v>{}</v></c>"#, text(&v.raw))
            }
        }
    }
}
