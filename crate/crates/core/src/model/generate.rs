//! Seeded generators of consistent urban-mobility entity sets.

use super::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Table sizes for [`random_city`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CityShape {
    pub agencies: usize,
    pub stops: usize,
    pub routes: usize,
    pub services: usize,
    pub trips: usize,
    /// Each trip visits between 2 and this many distinct stops.
    pub max_stops_per_trip: usize,
}

impl CityShape {
    /// Draws a shape with every table holding between 1 and `max_rows` rows.
    pub fn random(rng: &mut impl Rng, max_rows: usize) -> Self {
        let max_rows = max_rows.max(2);
        CityShape {
            agencies: rng.gen_range(1..=max_rows.min(3)),
            stops: rng.gen_range(2..=max_rows),
            routes: rng.gen_range(1..=max_rows),
            services: rng.gen_range(1..=max_rows.min(4)),
            trips: rng.gen_range(1..=max_rows),
            max_stops_per_trip: rng.gen_range(2..=6),
        }
    }
}

const NAME_PARTS: [&str; 10] = ["Plaza", "Mayor", "Estación", "Hospital", "Puerto", "Norte", "Sur", "\"Centro\"", "Av. Reina, 3", "Universidad"];

fn name(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *NAME_PARTS.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

fn date(rng: &mut impl Rng) -> ServiceDate {
    ServiceDate::from_ymd(2019, 1, 1).expect("valid").add_days(rng.gen_range(0..4000))
}

/// A consistent set: every reference resolves, sequences increase along each
/// trip, and departure never precedes arrival.
pub fn random_city(rng: &mut impl Rng, shape: &CityShape) -> Vec<MobilityEntity> {
    let mut out: Vec<MobilityEntity> = Vec::new();
    let agencies: Vec<String> = (0..shape.agencies.max(1)).map(|i| format!("A{i}")).collect();
    for id in &agencies {
        out.push(
            Agency {
                agency_id: id.clone(),
                name: name(rng),
                url: format!("https://{}.example.org/", id.to_lowercase()),
                timezone: "Europe/Madrid".into(),
            }
            .into(),
        );
    }
    let stops: Vec<String> = (0..shape.stops.max(2)).map(|i| format!("S{i}")).collect();
    for id in &stops {
        out.push(
            Stop { stop_id: id.clone(), name: name(rng), lat: rng.gen_range(-89.9..89.9), lon: rng.gen_range(-179.9..179.9) }.into(),
        );
    }
    let routes: Vec<String> = (0..shape.routes.max(1)).map(|i| format!("R{i}")).collect();
    for id in &routes {
        out.push(
            Route {
                route_id: id.clone(),
                agency_id: agencies.choose(rng).expect("non-empty").clone(),
                short_name: rng.gen_range(1..100).to_string(),
                route_type: *[0, 1, 2, 3, 700].choose(rng).expect("non-empty"),
            }
            .into(),
        );
    }
    let services: Vec<String> = (0..shape.services.max(1)).map(|i| format!("SV{i}")).collect();
    for id in &services {
        let (a, b) = (date(rng), date(rng));
        let mut weekdays = [false; 7];
        weekdays.iter_mut().for_each(|d| *d = rng.gen_bool(0.7));
        out.push(Service { service_id: id.clone(), weekdays, start_date: a.min(b), end_date: a.max(b) }.into());
    }
    for t in 0..shape.trips.max(1) {
        let trip_id = format!("T{t}");
        out.push(
            Trip {
                trip_id: trip_id.clone(),
                route_id: routes.choose(rng).expect("non-empty").clone(),
                service_id: services.choose(rng).expect("non-empty").clone(),
                headsign: name(rng),
            }
            .into(),
        );
        let n = rng.gen_range(2..=shape.max_stops_per_trip.clamp(2, stops.len()));
        let mut seq = rng.gen_range(0..3u32);
        let mut clock = rng.gen_range(4 * 3600..26 * 3600u32);
        for stop in stops.choose_multiple(rng, n) {
            let arrival = clock;
            let departure = arrival + rng.gen_range(0..120);
            out.push(
                StopTime { trip_id: trip_id.clone(), stop_id: stop.clone(), stop_sequence: seq, arrival_time: arrival, departure_time: departure }
                    .into(),
            );
            seq += rng.gen_range(1..4);
            clock = departure + rng.gen_range(60..1200);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_cities_are_consistent() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = CityShape::random(&mut rng, 20);
            let city = random_city(&mut rng, &shape);
            let report = validate_typed(&city);
            assert!(report.is_empty(), "seed {seed}: {report}");
        }
    }
}
