//! Attribution heatmap rendering as binary PPM (P6): AU rows vertical in
//! catalog order, 87 frames horizontal, diverging blue-white-red scale
//! anchored symmetrically at the per-trial max |attribution|, and a black
//! separator overlaid where the upper facial block meets the lower block.

use prespeech_core::dataset::{AU_ROWS, FRAMES};
use prespeech_core::explain::AttributionMap;

/// Rows 0..8 are the upper facial region; the separator sits on the first
/// pixel row of the lower block.
const UPPER_ROWS: usize = 8;

fn diverging_rgb(t: f64) -> [u8; 3] {
    // t in [-1, 1]: blue for negative, white at zero, red for positive.
    let t = t.clamp(-1.0, 1.0);
    let fade = |v: f64| (v * 255.0).round() as u8;
    if t >= 0.0 {
        [255, fade(1.0 - t), fade(1.0 - t)]
    } else {
        [fade(1.0 + t), fade(1.0 + t), 255]
    }
}

/// Renders the map at `cell` pixels per matrix cell. The image is exactly
/// (87*cell) x (17*cell) pixels.
pub fn render_ppm(map: &AttributionMap, cell: usize) -> Vec<u8> {
    let width = FRAMES * cell;
    let height = AU_ROWS * cell;
    let scale = map
        .values
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    let mut body = vec![0u8; width * height * 3];
    for row in 0..AU_ROWS {
        for frame in 0..FRAMES {
            let v = map.values.data()[row * FRAMES + frame];
            let t = if scale == 0.0 { 0.0 } else { v / scale };
            let rgb = diverging_rgb(t);
            for py in row * cell..(row + 1) * cell {
                for px in frame * cell..(frame + 1) * cell {
                    let at = (py * width + px) * 3;
                    body[at..at + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    // Separator between the upper and lower AU blocks.
    let line_y = UPPER_ROWS * cell;
    for px in 0..width {
        let at = (line_y * width + px) * 3;
        body[at..at + 3].copy_from_slice(&[0, 0, 0]);
    }

    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use prespeech_core::Tensor;

    fn map_of(values: Tensor) -> AttributionMap {
        AttributionMap {
            values,
            trial_id: 0,
            target_class: "stuttered".into(),
            reference: "zeros x1".into(),
        }
    }

    #[test]
    fn dimensions_match_cell_size() {
        let map = map_of(Tensor::zeros(&[AU_ROWS, FRAMES]));
        for cell in [1, 4, 8] {
            let ppm = render_ppm(&map, cell);
            let header = format!("P6\n{} {}\n255\n", FRAMES * cell, AU_ROWS * cell);
            assert!(ppm.starts_with(header.as_bytes()));
            assert_eq!(ppm.len(), header.len() + FRAMES * cell * AU_ROWS * cell * 3);
        }
    }

    #[test]
    fn zero_map_renders_neutral_except_separator() {
        let map = map_of(Tensor::zeros(&[AU_ROWS, FRAMES]));
        let cell = 2;
        let ppm = render_ppm(&map, cell);
        let header_len = format!("P6\n{} {}\n255\n", FRAMES * cell, AU_ROWS * cell).len();
        let body = &ppm[header_len..];
        let width = FRAMES * cell;
        let line_y = 8 * cell;
        for (i, px) in body.chunks(3).enumerate() {
            let y = i / width;
            if y == line_y {
                assert_eq!(px, &[0, 0, 0], "separator row must be black");
            } else {
                assert_eq!(px, &[255, 255, 255], "pixel {i} not neutral");
            }
        }
    }

    #[test]
    fn positive_is_warm_negative_is_cool() {
        let mut values = Tensor::zeros(&[AU_ROWS, FRAMES]);
        values.data_mut()[0] = 1.0; // AU1, frame 0 -> red
        values.data_mut()[FRAMES] = -1.0; // AU2, frame 0 -> blue
        let map = map_of(values);
        let ppm = render_ppm(&map, 1);
        let header_len = format!("P6\n{FRAMES} {AU_ROWS}\n255\n").len();
        let body = &ppm[header_len..];
        assert_eq!(&body[0..3], &[255, 0, 0]);
        let second_row = FRAMES * 3;
        assert_eq!(&body[second_row..second_row + 3], &[0, 0, 255]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut values = Tensor::zeros(&[AU_ROWS, FRAMES]);
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 0.137).sin();
        }
        let map = map_of(values);
        assert_eq!(render_ppm(&map, 3), render_ppm(&map, 3));
    }
}
