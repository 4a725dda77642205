use super::{format_gtfs_time, parse_gtfs_time, Agency, GtfsError, GtfsFeed, Route, Service, ServiceDate, Stop, StopTime, Trip};
use std::collections::{HashMap, HashSet};
use std::io::{Cursor, Read, Write};
use zip::write::SimpleFileOptions;

pub const FEED_FILES: [&str; 6] = ["agency.txt", "stops.txt", "routes.txt", "calendar.txt", "trips.txt", "stop_times.txt"];

const AGENCY_COLS: [&str; 4] = ["agency_id", "agency_name", "agency_url", "agency_timezone"];
const STOP_COLS: [&str; 4] = ["stop_id", "stop_name", "stop_lat", "stop_lon"];
const ROUTE_COLS: [&str; 4] = ["route_id", "agency_id", "route_short_name", "route_type"];
const CALENDAR_COLS: [&str; 10] = [
    "service_id", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "start_date", "end_date",
];
const TRIP_COLS: [&str; 4] = ["trip_id", "route_id", "service_id", "trip_headsign"];
const STOP_TIME_COLS: [&str; 5] = ["trip_id", "stop_id", "stop_sequence", "arrival_time", "departure_time"];

/// One CSV table with the requested columns resolved to indices.
struct Table {
    file: &'static str,
    rows: Vec<(usize, csv::StringRecord)>,
    cols: Vec<usize>,
}

impl Table {
    fn load(archive: &mut zip::ZipArchive<Cursor<&[u8]>>, file: &'static str, wanted: &[&str]) -> Result<Self, GtfsError> {
        let index = (0..archive.len())
            .find(|&i| {
                archive
                    .name_for_index(i)
                    .is_some_and(|n| n == file || n.rsplit('/').next() == Some(file))
            })
            .ok_or_else(|| GtfsError::MissingFile(file.to_string()))?;
        let mut raw = Vec::new();
        archive
            .by_index(index)
            .and_then(|mut f| f.read_to_end(&mut raw).map_err(Into::into))
            .map_err(|e| GtfsError::Archive(format!("{file}: {e}")))?;
        let body = raw.strip_prefix(b"\xEF\xBB\xBF".as_slice()).unwrap_or(&raw);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(body);
        let headers = reader.headers().map_err(|e| GtfsError::Archive(format!("{file}: {e}")))?.clone();
        let cols = wanted
            .iter()
            .map(|w| {
                headers.iter().position(|h| h == *w).ok_or_else(|| GtfsError::MissingColumn {
                    file: file.to_string(),
                    column: w.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| GtfsError::InvalidRecord {
                file: file.to_string(),
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                detail: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Table { file, rows, cols })
    }

    fn invalid(&self, line: usize, detail: impl Into<String>) -> GtfsError {
        GtfsError::InvalidRecord { file: self.file.to_string(), line, detail: detail.into() }
    }

    fn dangling(&self, line: usize, detail: impl Into<String>) -> GtfsError {
        GtfsError::ReferentialViolation { file: self.file.to_string(), line, detail: detail.into() }
    }

    fn parse<T>(&self, mut f: impl FnMut(usize, Field<'_>) -> Result<T, GtfsError>) -> Result<Vec<T>, GtfsError> {
        self.rows
            .iter()
            .map(|(line, rec)| f(*line, Field { table: self, rec, line: *line }))
            .collect()
    }
}

struct Field<'a> {
    table: &'a Table,
    rec: &'a csv::StringRecord,
    line: usize,
}

impl Field<'_> {
    fn text(&self, i: usize) -> String {
        self.rec.get(self.table.cols[i]).unwrap_or_default().to_string()
    }

    fn id(&self, i: usize, column: &str) -> Result<String, GtfsError> {
        let v = self.text(i);
        if v.is_empty() {
            return Err(self.table.invalid(self.line, format!("empty {column}")));
        }
        Ok(v)
    }

    fn number<T: std::str::FromStr>(&self, i: usize, column: &str) -> Result<T, GtfsError> {
        let v = self.text(i);
        v.trim().parse().map_err(|_| self.table.invalid(self.line, format!("{column}: cannot parse {v:?}")))
    }

    fn time(&self, i: usize) -> Result<u32, GtfsError> {
        parse_gtfs_time(self.text(i).trim()).map_err(|e| self.table.invalid(self.line, e.to_string()))
    }

    fn date(&self, i: usize) -> Result<ServiceDate, GtfsError> {
        self.text(i).trim().parse().map_err(|e: GtfsError| self.table.invalid(self.line, e.to_string()))
    }

    fn flag(&self, i: usize, column: &str) -> Result<bool, GtfsError> {
        match self.text(i).trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(self.table.invalid(self.line, format!("{column} must be 0 or 1, got {other:?}"))),
        }
    }
}

fn unique<'a>(table: &Table, keys: impl Iterator<Item = (usize, String)>) -> Result<HashSet<String>, GtfsError> {
    let mut seen = HashSet::new();
    for (line, k) in keys {
        if !seen.insert(k.clone()) {
            return Err(table.invalid(line, format!("duplicate key {k:?}")));
        }
    }
    Ok(seen)
}

/// Parses a zipped GTFS feed, checking columns, values and referential
/// integrity. Unknown files and columns are ignored.
pub fn read_feed(zip_bytes: &[u8]) -> Result<GtfsFeed, GtfsError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(zip_bytes)).map_err(|e| GtfsError::Archive(e.to_string()))?;

    let t = Table::load(&mut archive, "agency.txt", &AGENCY_COLS)?;
    let agencies = t.parse(|_, f| {
        Ok(Agency { agency_id: f.id(0, "agency_id")?, name: f.text(1), url: f.text(2), timezone: f.text(3) })
    })?;
    let agency_ids = unique(&t, t.rows.iter().zip(&agencies).map(|((l, _), a)| (*l, a.agency_id.clone())))?;

    let t = Table::load(&mut archive, "stops.txt", &STOP_COLS)?;
    let stops = t.parse(|line, f| {
        let s = Stop { stop_id: f.id(0, "stop_id")?, name: f.text(1), lat: f.number(2, "stop_lat")?, lon: f.number(3, "stop_lon")? };
        crate::geo::GeoPoint::new(s.lat, s.lon).map_err(|e| t.invalid(line, e.to_string()))?;
        Ok(s)
    })?;
    let stop_ids = unique(&t, t.rows.iter().zip(&stops).map(|((l, _), s)| (*l, s.stop_id.clone())))?;

    let t = Table::load(&mut archive, "routes.txt", &ROUTE_COLS)?;
    let routes = t.parse(|line, f| {
        let r = Route {
            route_id: f.id(0, "route_id")?,
            agency_id: f.id(1, "agency_id")?,
            short_name: f.text(2),
            route_type: f.number(3, "route_type")?,
        };
        if !agency_ids.contains(&r.agency_id) {
            return Err(t.dangling(line, format!("route {} references unknown agency {:?}", r.route_id, r.agency_id)));
        }
        Ok(r)
    })?;
    let route_ids = unique(&t, t.rows.iter().zip(&routes).map(|((l, _), r)| (*l, r.route_id.clone())))?;

    let t = Table::load(&mut archive, "calendar.txt", &CALENDAR_COLS)?;
    let services = t.parse(|line, f| {
        let mut weekdays = [false; 7];
        for (d, flag) in weekdays.iter_mut().enumerate() {
            *flag = f.flag(1 + d, CALENDAR_COLS[1 + d])?;
        }
        let s = Service { service_id: f.id(0, "service_id")?, weekdays, start_date: f.date(8)?, end_date: f.date(9)? };
        if s.start_date > s.end_date {
            return Err(t.invalid(line, format!("start_date {} after end_date {}", s.start_date, s.end_date)));
        }
        Ok(s)
    })?;
    let service_ids = unique(&t, t.rows.iter().zip(&services).map(|((l, _), s)| (*l, s.service_id.clone())))?;

    let t = Table::load(&mut archive, "trips.txt", &TRIP_COLS)?;
    let trips = t.parse(|line, f| {
        let tr = Trip { trip_id: f.id(0, "trip_id")?, route_id: f.id(1, "route_id")?, service_id: f.id(2, "service_id")?, headsign: f.text(3) };
        if !route_ids.contains(&tr.route_id) {
            return Err(t.dangling(line, format!("trip {} references unknown route {:?}", tr.trip_id, tr.route_id)));
        }
        if !service_ids.contains(&tr.service_id) {
            return Err(t.dangling(line, format!("trip {} references unknown service {:?}", tr.trip_id, tr.service_id)));
        }
        Ok(tr)
    })?;
    let trip_ids = unique(&t, t.rows.iter().zip(&trips).map(|((l, _), tr)| (*l, tr.trip_id.clone())))?;

    let t = Table::load(&mut archive, "stop_times.txt", &STOP_TIME_COLS)?;
    let stop_times = t.parse(|line, f| {
        let st = StopTime {
            trip_id: f.id(0, "trip_id")?,
            stop_id: f.id(1, "stop_id")?,
            stop_sequence: f.number(2, "stop_sequence")?,
            arrival_time: f.time(3)?,
            departure_time: f.time(4)?,
        };
        if !trip_ids.contains(&st.trip_id) {
            return Err(t.dangling(line, format!("stop time references unknown trip {:?}", st.trip_id)));
        }
        if !stop_ids.contains(&st.stop_id) {
            return Err(t.dangling(line, format!("stop time references unknown stop {:?}", st.stop_id)));
        }
        if st.departure_time < st.arrival_time {
            return Err(t.invalid(line, "departure_time before arrival_time"));
        }
        Ok(st)
    })?;
    let mut seq_seen: HashMap<(&str, u32), usize> = HashMap::new();
    for ((line, _), st) in t.rows.iter().zip(&stop_times) {
        if seq_seen.insert((&st.trip_id, st.stop_sequence), *line).is_some() {
            return Err(t.invalid(*line, format!("duplicate stop_sequence {} in trip {}", st.stop_sequence, st.trip_id)));
        }
    }
    drop(seq_seen);

    Ok(GtfsFeed { agencies, stops, routes, services, trips, stop_times, feed_version: None }.canonicalized())
}

fn csv_table<I>(header: &[&str], rows: I) -> Result<Vec<u8>, GtfsError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    let err = |e: csv::Error| GtfsError::Archive(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| GtfsError::Archive(e.to_string()))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Serializes `feed` as a deterministic zip: fixed member order and
/// timestamps, rows in primary-key order, UTF-8 without BOM, LF endings.
pub fn write_feed(feed: &GtfsFeed) -> Result<Vec<u8>, GtfsError> {
    let feed = feed.clone().canonicalized();
    let tables: [(&str, Vec<u8>); 6] = [
        (
            "agency.txt",
            csv_table(&AGENCY_COLS, feed.agencies.iter().map(|a| vec![a.agency_id.clone(), a.name.clone(), a.url.clone(), a.timezone.clone()]))?,
        ),
        (
            "stops.txt",
            csv_table(&STOP_COLS, feed.stops.iter().map(|s| vec![s.stop_id.clone(), s.name.clone(), s.lat.to_string(), s.lon.to_string()]))?,
        ),
        (
            "routes.txt",
            csv_table(
                &ROUTE_COLS,
                feed.routes.iter().map(|r| vec![r.route_id.clone(), r.agency_id.clone(), r.short_name.clone(), r.route_type.to_string()]),
            )?,
        ),
        (
            "calendar.txt",
            csv_table(
                &CALENDAR_COLS,
                feed.services.iter().map(|s| {
                    let mut row = vec![s.service_id.clone()];
                    row.extend(s.weekdays.iter().map(|d| flag(*d)));
                    row.push(s.start_date.to_string());
                    row.push(s.end_date.to_string());
                    row
                }),
            )?,
        ),
        (
            "trips.txt",
            csv_table(
                &TRIP_COLS,
                feed.trips.iter().map(|t| vec![t.trip_id.clone(), t.route_id.clone(), t.service_id.clone(), t.headsign.clone()]),
            )?,
        ),
        (
            "stop_times.txt",
            csv_table(
                &STOP_TIME_COLS,
                feed.stop_times.iter().map(|st| {
                    vec![
                        st.trip_id.clone(),
                        st.stop_id.clone(),
                        st.stop_sequence.to_string(),
                        format_gtfs_time(st.arrival_time),
                        format_gtfs_time(st.departure_time),
                    ]
                }),
            )?,
        ),
    ];
    let mut zw = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    let err = |e: zip::result::ZipError| GtfsError::Archive(e.to_string());
    for (name, body) in tables {
        zw.start_file(name, opts).map_err(err)?;
        zw.write_all(&body).map_err(|e| GtfsError::Archive(e.to_string()))?;
    }
    Ok(zw.finish().map_err(err)?.into_inner())
}
