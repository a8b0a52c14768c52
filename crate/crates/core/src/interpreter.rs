//! Sleep/active command state machine driving a virtual RGB LED.
//!
//! Keywords are gated by confidence; the machine only listens once WAKE UP
//! has been heard and drops back to sleep after a period without accepted
//! commands. Colors, ON/OFF and modifier words only update variables: the
//! LED changes when the LED keyword executes them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::keyword::Keyword;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterpreterError {
    #[error("unknown keyword {0:?}")]
    UnknownKeyword(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpreterConfig {
    pub threshold: f64,
    pub timeout_ms: u64,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            threshold: 0.60,
            timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEvent {
    pub keyword: String,
    pub confidence: f64,
    pub timestamp_ms: u64,
}

impl CommandEvent {
    pub fn new(keyword: impl Into<String>, confidence: f64, timestamp_ms: u64) -> Self {
        Self {
            keyword: keyword.into(),
            confidence,
            timestamp_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Sleep,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Flags {
    pub led_on: bool,
    pub led_off: bool,
    pub and_key: bool,
    pub cancel_key: bool,
    pub blink_key: bool,
    pub fast_key: bool,
    pub flash_key: bool,
    pub slow_key: bool,
    pub plus_key: bool,
    pub quick_key: bool,
    pub toggle_key: bool,
    pub wake_up: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpreterState {
    pub mode: Mode,
    pub color: u8,
    pub color_set: BTreeSet<u8>,
    pub flags: Flags,
    pub last_activity_ms: u64,
}

impl Default for InterpreterState {
    fn default() -> Self {
        Self {
            mode: Mode::Sleep,
            color: 0,
            color_set: BTreeSet::new(),
            flags: Flags::default(),
            last_activity_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlinkMode {
    #[default]
    None,
    Blink,
    Fast,
    Flash,
    Slow,
}

impl BlinkMode {
    /// Full on/off period, `None` for a steady light.
    pub fn period_ms(self) -> Option<u64> {
        match self {
            BlinkMode::None => None,
            BlinkMode::Blink => Some(500),
            BlinkMode::Fast => Some(150),
            BlinkMode::Flash => Some(75),
            BlinkMode::Slow => Some(1000),
        }
    }

    fn from_flags(f: &Flags) -> Self {
        if f.flash_key {
            if f.slow_key {
                BlinkMode::Slow
            } else {
                BlinkMode::Flash
            }
        } else if f.fast_key {
            BlinkMode::Fast
        } else if f.blink_key || f.slow_key {
            if f.slow_key {
                BlinkMode::Slow
            } else {
                BlinkMode::Blink
            }
        } else {
            BlinkMode::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedState {
    pub on: bool,
    pub rgb_set: BTreeSet<[u8; 3]>,
    pub blink: BlinkMode,
}

/// Saturated RGB for color codes 1..=7.
pub fn color_rgb(code: u8) -> Option<[u8; 3]> {
    Some(match code {
        1 => [0, 0, 255],
        2 => [0, 255, 0],
        3 => [0, 255, 255],
        4 => [255, 0, 0],
        5 => [255, 0, 255],
        6 => [255, 255, 0],
        7 => [255, 255, 255],
        _ => return None,
    })
}

/// One processed event, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub ts: u64,
    pub event: String,
    pub accepted: bool,
    pub mode: Mode,
    pub color: u8,
    pub flags: Flags,
    pub led: LedState,
}

impl ActionTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

fn fall_asleep(state: &mut InterpreterState) {
    state.mode = Mode::Sleep;
    state.flags.wake_up = false;
}

/// Drops to SLEEP when `now` is at least `timeout_ms` past the last accepted
/// event. Returns whether the mode changed.
pub fn apply_timeout(state: &mut InterpreterState, now_ms: u64, config: &InterpreterConfig) -> bool {
    if state.mode == Mode::Active && now_ms.saturating_sub(state.last_activity_ms) >= config.timeout_ms {
        fall_asleep(state);
        return true;
    }
    false
}

/// Pure transition. Events below threshold and non-command classes leave
/// state and LED untouched.
pub fn step(
    state: &InterpreterState,
    led: &LedState,
    event: &CommandEvent,
    config: &InterpreterConfig,
) -> Result<(InterpreterState, LedState, ActionTrace), InterpreterError> {
    let keyword =
        Keyword::parse(&event.keyword).ok_or_else(|| InterpreterError::UnknownKeyword(event.keyword.clone()))?;
    let mut s = state.clone();
    let mut l = led.clone();
    let gated = event.confidence < config.threshold || keyword.is_non_command();
    let mut accepted = false;
    if !gated {
        apply_timeout(&mut s, event.timestamp_ms, config);
        match s.mode {
            Mode::Sleep => {
                if keyword == Keyword::WakeUp {
                    s.mode = Mode::Active;
                    s.flags.wake_up = true;
                    s.last_activity_ms = event.timestamp_ms;
                    accepted = true;
                }
            }
            Mode::Active => {
                s.last_activity_ms = event.timestamp_ms;
                execute(&mut s, &mut l, keyword);
                accepted = true;
            }
        }
    }
    let trace = ActionTrace {
        ts: event.timestamp_ms,
        event: keyword.label().to_string(),
        accepted,
        mode: s.mode,
        color: s.color,
        flags: s.flags,
        led: l.clone(),
    };
    Ok((s, l, trace))
}

fn execute(s: &mut InterpreterState, l: &mut LedState, keyword: Keyword) {
    if let Some(code) = keyword.color_code() {
        if s.flags.and_key {
            s.color_set.insert(code);
            s.flags.and_key = false;
        } else {
            s.color_set.clear();
            s.color_set.insert(code);
        }
        s.color = code;
        return;
    }
    let f = &mut s.flags;
    match keyword {
        Keyword::On => {
            f.led_on = true;
            f.led_off = false;
        }
        Keyword::Off => {
            f.led_off = true;
            f.led_on = false;
            s.color = 0;
            s.color_set.clear();
        }
        Keyword::And => f.and_key = true,
        Keyword::Blink => f.blink_key = true,
        Keyword::Fast => f.fast_key = true,
        Keyword::Flash => f.flash_key = true,
        Keyword::Slow => f.slow_key = true,
        Keyword::Plus => f.plus_key = true,
        Keyword::Quick => f.quick_key = true,
        Keyword::Toggle => f.toggle_key = true,
        Keyword::Cancel => {
            *f = Flags {
                wake_up: f.wake_up,
                ..Flags::default()
            };
            s.color = 0;
            s.color_set.clear();
        }
        Keyword::Led => {
            if f.led_on && !s.color_set.is_empty() {
                *l = LedState {
                    on: true,
                    rgb_set: s.color_set.iter().filter_map(|&c| color_rgb(c)).collect(),
                    blink: BlinkMode::from_flags(f),
                };
            } else if f.led_off {
                *l = LedState::default();
            }
        }
        // re-triggered wake word only refreshes the activity clock
        Keyword::WakeUp => {}
        _ => {}
    }
}

/// Left fold of [`step`] from the initial state.
pub fn run_sequence(
    events: &[CommandEvent],
    config: &InterpreterConfig,
) -> Result<(InterpreterState, LedState, Vec<ActionTrace>), InterpreterError> {
    let mut it = Interpreter::new(*config);
    let mut traces = Vec::with_capacity(events.len());
    for e in events {
        traces.push(it.handle(e)?);
    }
    Ok((it.state, it.led, traces))
}

/// Mutable wrapper holding the current state and LED.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpreter {
    pub config: InterpreterConfig,
    state: InterpreterState,
    led: LedState,
}

impl Interpreter {
    pub fn new(config: InterpreterConfig) -> Self {
        Self {
            config,
            state: InterpreterState::default(),
            led: LedState::default(),
        }
    }

    pub fn state(&self) -> &InterpreterState {
        &self.state
    }

    pub fn led(&self) -> &LedState {
        &self.led
    }

    pub fn handle(&mut self, event: &CommandEvent) -> Result<ActionTrace, InterpreterError> {
        let (s, l, trace) = step(&self.state, &self.led, event, &self.config)?;
        self.state = s;
        self.led = l;
        Ok(trace)
    }

    /// Applies the inactivity timeout at `now_ms`; true if the machine fell asleep.
    pub fn tick(&mut self, now_ms: u64) -> bool {
        apply_timeout(&mut self.state, now_ms, &self.config)
    }

    pub fn reset(&mut self) {
        self.state = InterpreterState::default();
        self.led = LedState::default();
    }
}
