//! Simulation time: one tick is one simulated minute starting at 2024-01-01T00:00.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};

pub const TICK_SECONDS: u64 = 60;
pub const TICKS_PER_DAY: u64 = 1440;
pub const TICKS_PER_HOUR: u64 = 60;

pub fn start_datetime() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    pub tick: u64,
}

impl SimClock {
    pub fn new(tick: u64) -> Self {
        SimClock { tick }
    }

    pub fn day(&self) -> u64 {
        self.tick / TICKS_PER_DAY
    }

    /// Minute of the day, 0..1440.
    pub fn minute_of_day(&self) -> u64 {
        self.tick % TICKS_PER_DAY
    }

    pub fn hour(&self) -> u64 {
        self.minute_of_day() / TICKS_PER_HOUR
    }

    pub fn is_day_start(&self) -> bool {
        self.minute_of_day() == 0
    }

    pub fn is_day_end(&self) -> bool {
        self.minute_of_day() == TICKS_PER_DAY - 1
    }

    /// Days 0-4 of every 7-day cycle.
    pub fn is_weekday(&self) -> bool {
        self.day() % 7 < 5
    }

    pub fn datetime(&self) -> NaiveDateTime {
        start_datetime() + Duration::seconds((self.tick * TICK_SECONDS) as i64)
    }
}

/// ISO-8601 without a zone, e.g. `2024-01-01T13:05:00`.
pub fn timestamp(tick: u64) -> String {
    let dt = SimClock::new(tick).datetime();
    let (h, m) = (tick % TICKS_PER_DAY / 60, tick % 60);
    format!("{:04}-{:02}-{:02}T{:02}:{:02}:00", dt.year(), dt.month(), dt.day(), h, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_arithmetic() {
        let c = SimClock::new(14_400);
        assert_eq!(c.day(), 10);
        assert!(c.is_day_start());
        assert!(SimClock::new(1439).is_day_end());
        assert_eq!(SimClock::new(60 * 13 + 5).hour(), 13);
    }

    #[test]
    fn weekdays() {
        // 2024-01-01 is a Monday
        assert_eq!(start_datetime().weekday(), chrono::Weekday::Mon);
        assert!(SimClock::new(4 * TICKS_PER_DAY).is_weekday());
        assert!(!SimClock::new(5 * TICKS_PER_DAY).is_weekday());
        assert!(!SimClock::new(6 * TICKS_PER_DAY + 100).is_weekday());
        assert!(SimClock::new(7 * TICKS_PER_DAY).is_weekday());
    }

    #[test]
    fn timestamps() {
        assert_eq!(timestamp(0), "2024-01-01T00:00:00");
        assert_eq!(timestamp(785), "2024-01-01T13:05:00");
        assert_eq!(timestamp(31 * TICKS_PER_DAY + 1439), "2024-02-01T23:59:00");
    }
}
