use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma};

use super::{CityConfig, TaxiState};
use crate::aggregation::ZoneDistribution;
use crate::error::{Error, Result};

const STREET: u8 = 48;
const TAXI: u8 = 255;
/// Pixels per zone edge in the public heatmap.
const ZONE_PIXELS: u32 = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViewFiles {
    pub public_csv: PathBuf,
    pub public_pgm: PathBuf,
    /// `(company, positions csv, map pgm)`.
    pub companies: Vec<(u32, PathBuf, PathBuf)>,
    pub global: Option<(PathBuf, PathBuf)>,
}

fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    PnmEncoder::new(w)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// One line per zone row, `zy = 0` first, counts comma-separated by `zx`.
fn zone_csv(d: &ZoneDistribution) -> String {
    let n = d.zones_per_side;
    let mut out = String::new();
    for zy in 0..n {
        let row: Vec<String> = (0..n).map(|zx| d.get(zx, zy).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Brightness scales with count; north is up.
fn zone_image(d: &ZoneDistribution) -> GrayImage {
    let n = d.zones_per_side;
    let max = d.counts.iter().copied().max().unwrap_or(0).max(1);
    GrayImage::from_fn(n * ZONE_PIXELS, n * ZONE_PIXELS, |px, py| {
        let (zx, zy) = (px / ZONE_PIXELS, n - 1 - py / ZONE_PIXELS);
        Luma([(d.get(zx, zy) * 255 / max) as u8])
    })
}

fn positions_csv<'a>(taxis: impl Iterator<Item = &'a TaxiState>) -> String {
    let mut out = String::from("taxi_id,company,x,y\n");
    for t in taxis {
        out.push_str(&format!("{},{},{},{}\n", t.taxi_id, t.company, t.x, t.y));
    }
    out
}

fn street_map<'a>(city: &CityConfig, taxis: impl Iterator<Item = &'a TaxiState>) -> GrayImage {
    let g = city.grid_side;
    let s = city.intersection_spacing;
    let mut img = GrayImage::from_fn(g, g, |px, py| {
        let y = g - 1 - py;
        Luma([if px % s == 0 || y.is_multiple_of(s) { STREET } else { 0 }])
    });
    for t in taxis {
        let py = g - 1 - t.y;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (i64::from(t.x) + dx, i64::from(py) + dy);
                if (0..i64::from(g)).contains(&x) && (0..i64::from(g)).contains(&y) {
                    img.put_pixel(x as u32, y as u32, Luma([TAXI]));
                }
            }
        }
    }
    img
}

/// Writes the public zone heatmap and one view per company showing only its
/// own taxis. Positions of the whole fleet are written only when
/// `debug_global` is set.
pub fn render_views(
    city: &CityConfig,
    taxis: &[TaxiState],
    distribution: &ZoneDistribution,
    out_dir: &Path,
    debug_global: bool,
) -> Result<ViewFiles> {
    fs::create_dir_all(out_dir)?;
    let mut files = ViewFiles {
        public_csv: out_dir.join("public_zones.csv"),
        public_pgm: out_dir.join("public_zones.pgm"),
        ..Default::default()
    };
    fs::write(&files.public_csv, zone_csv(distribution))?;
    write_pgm(&files.public_pgm, &zone_image(distribution))?;

    for company in 0..city.n_companies {
        let own = || taxis.iter().filter(move |t| t.company == company);
        let csv = out_dir.join(format!("company_{company}_positions.csv"));
        let pgm = out_dir.join(format!("company_{company}.pgm"));
        fs::write(&csv, positions_csv(own()))?;
        write_pgm(&pgm, &street_map(city, own()))?;
        files.companies.push((company, csv, pgm));
    }

    if debug_global {
        log::warn!("writing the global view: it reveals every company's taxi positions");
        let csv = out_dir.join("global_positions.csv");
        let pgm = out_dir.join("global.pgm");
        let mut w = BufWriter::new(File::create(&csv)?);
        w.write_all(positions_csv(taxis.iter()).as_bytes())?;
        w.flush()?;
        write_pgm(&pgm, &street_map(city, taxis.iter()))?;
        files.global = Some((csv, pgm));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::aggregation::agg_zone_count;
    use crate::taxi::init_city;

    #[test]
    fn views_respect_company_isolation() {
        let city = CityConfig { n_taxis: 40, n_companies: 3, ..Default::default() };
        let taxis = init_city(&mut ChaCha20Rng::seed_from_u64(2), &city).unwrap();
        let pos: Vec<_> = taxis.iter().map(TaxiState::position).collect();
        let dist = agg_zone_count(&pos, city.grid_side, city.zone_side).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let files = render_views(&city, &taxis, &dist, dir.path(), false).unwrap();
        assert!(files.global.is_none());
        assert!(!dir.path().join("global_positions.csv").exists());

        let csv = fs::read_to_string(&files.public_csv).unwrap();
        let cells: Vec<u64> = csv.lines().flat_map(|l| l.split(',').map(|c| c.parse::<u64>().unwrap())).collect();
        assert_eq!(cells, dist.counts);

        for (company, csv, _) in &files.companies {
            let text = fs::read_to_string(csv).unwrap();
            for line in text.lines().skip(1) {
                let id = line.split(',').next().unwrap();
                let t = taxis.iter().find(|t| t.taxi_id.as_str() == id).unwrap();
                assert_eq!(t.company, *company);
            }
        }

        let img = image::open(&files.public_pgm).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (100, 100));

        let files = render_views(&city, &taxis, &dist, dir.path(), true).unwrap();
        let (global_csv, _) = files.global.unwrap();
        assert_eq!(fs::read_to_string(global_csv).unwrap().lines().count(), 41);
    }
}
