#![no_main]

use libfuzzer_sys::fuzz_target;
use safeocc::io::{decode_dataset, DatasetMeta};

// Input layout: u32 LE metadata length, u32 LE image-blob length, the
// dataset.json bytes, the image blob, and the label blob as the remainder.
fuzz_target!(|data: &[u8]| {
    if data.len() < 8 {
        return;
    }
    let meta_len = u32::from_le_bytes(data[..4].try_into().unwrap()) as usize;
    let img_len = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    let rest = &data[8..];
    if meta_len > rest.len() || img_len > rest.len() - meta_len {
        return;
    }
    let (meta, rest) = rest.split_at(meta_len);
    let (images, labels) = rest.split_at(img_len);
    let Ok(meta) = serde_json::from_slice::<DatasetMeta>(meta) else { return };
    if let Ok((ds, meta)) = decode_dataset(meta, images, labels) {
        assert_eq!(ds.len(), meta.count);
    }
});
