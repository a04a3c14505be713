use serde::{Deserialize, Serialize};

use super::ExecError;
use crate::workbook::Workbook;

/// Image-to-text provider behind `transcribe_image`.
pub trait OcrProvider: Send + Sync {
    fn id(&self) -> &str;
    fn transcribe(&self, payload: &[u8], encoding: &str, alt_text: &str) -> Result<String, ExecError>;
}

/// Returns the alt text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubOcr;

impl OcrProvider for StubOcr {
    fn id(&self) -> &str {
        "stub"
    }

    fn transcribe(&self, _payload: &[u8], _encoding: &str, alt_text: &str) -> Result<String, ExecError> {
        Ok(alt_text.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub image_id: String,
    pub text: String,
    /// Provider id; `stub` when no real OCR ran.
    pub ocr: String,
}

pub fn transcribe_with(
    provider: &dyn OcrProvider,
    image_id: &str,
    payload: &[u8],
    encoding: &str,
    alt_text: &str,
) -> Result<Transcription, ExecError> {
    Ok(Transcription {
        image_id: image_id.into(),
        text: provider.transcribe(payload, encoding, alt_text)?,
        ocr: provider.id().into(),
    })
}

/// Transcribes an embedded image of `wb` with the stub provider.
pub fn transcribe_image(wb: &Workbook, image_id: &str) -> Result<Transcription, ExecError> {
    let img = wb
        .find_image(image_id)
        .ok_or_else(|| ExecError::ImageNotFound(image_id.into()))?;
    transcribe_with(&StubOcr, image_id, &img.payload, &img.encoding, &img.alt_text)
}
