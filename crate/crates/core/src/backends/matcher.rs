//! Text-level trigger matching over streamed token deltas.
//!
//! Token boundaries are arbitrary: a trigger word or marker can arrive split
//! across two deltas ("Wa" + "it,"), or a delta can end mid-word so that a
//! candidate match is not yet decidable ("wait" + "er"). Both matchers keep a
//! short tail of recently seen text so that the per-delta counts always agree
//! with a single-pass scan over the joined text.

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Word-boundary matcher for the intervention trigger word.
///
/// A match is only credited once its right-hand boundary is known: a delta
/// ending exactly in the target word stays pending until the next delta (or
/// end of stream) confirms or invalidates it. This makes the total count
/// independent of how the text was split into deltas.
#[derive(Debug, Clone)]
pub struct WaitMatcher {
    target: Vec<char>,
    case_sensitive: bool,
    /// Last `target.len() - 1` chars of the stream, for cross-delta matches.
    tail: Vec<char>,
    /// Whether the char immediately before `tail` was a word char.
    before_tail_is_word: bool,
    /// A match ended exactly at the end of the seen text; boundary unconfirmed.
    pending: bool,
}

impl WaitMatcher {
    pub fn new(target_word: &str, case_sensitive: bool) -> Self {
        let target: Vec<char> = if case_sensitive {
            target_word.chars().collect()
        } else {
            target_word
                .chars()
                .map(|c| c.to_ascii_lowercase())
                .collect()
        };
        assert!(!target.is_empty(), "target word must be non-empty");
        Self {
            target,
            case_sensitive,
            tail: Vec::new(),
            before_tail_is_word: false,
            pending: false,
        }
    }

    /// Matcher for the default trigger word with its default settings.
    pub fn default_wait() -> Self {
        Self::new("wait", false)
    }

    fn eq_target_at(&self, text: &[char], pos: usize) -> bool {
        if pos + self.target.len() > text.len() {
            return false;
        }
        self.target.iter().enumerate().all(|(i, &t)| {
            let c = text[pos + i];
            let c = if self.case_sensitive {
                c
            } else {
                c.to_ascii_lowercase()
            };
            c == t
        })
    }

    fn left_boundary_ok(&self, text: &[char], pos: usize) -> bool {
        if pos == 0 {
            !self.before_tail_is_word
        } else {
            !is_word_char(text[pos - 1])
        }
    }

    /// Feed one token delta; returns the number of newly confirmed matches.
    pub fn push(&mut self, delta: &str) -> usize {
        if delta.is_empty() {
            return 0;
        }
        let delta_chars: Vec<char> = delta.chars().collect();
        let mut count = 0;

        if self.pending {
            // The previous delta ended in the target word; the first char of
            // this delta decides whether it was a whole word.
            if !is_word_char(delta_chars[0]) {
                count += 1;
            }
            self.pending = false;
        }

        let mut full = self.tail.clone();
        full.extend_from_slice(&delta_chars);
        let tlen = self.target.len();

        for pos in 0..full.len().saturating_sub(tlen - 1) {
            let end = pos + tlen;
            if end <= self.tail.len() {
                continue; // handled in an earlier push
            }
            if !self.eq_target_at(&full, pos) || !self.left_boundary_ok(&full, pos) {
                continue;
            }
            if end < full.len() {
                if !is_word_char(full[end]) {
                    count += 1;
                }
            } else {
                self.pending = true;
            }
        }

        // Slide the tail window.
        if full.len() >= tlen {
            let cut = full.len() - (tlen - 1);
            self.before_tail_is_word = is_word_char(full[cut - 1]);
            self.tail = full[cut..].to_vec();
        } else {
            self.tail = full;
        }
        count
    }

    /// End of stream: a still-pending match is a whole word.
    pub fn finish(&mut self) -> usize {
        if self.pending {
            self.pending = false;
            1
        } else {
            0
        }
    }

    /// Would `candidate` complete a match if it were the next delta?
    ///
    /// The end of the candidate is treated as a provisional boundary so that a
    /// peeked token equal to the target word counts, the same way a
    /// token-level argmax comparison against the trigger word would.
    pub fn completes_with(&self, candidate: &str) -> bool {
        if candidate.is_empty() {
            return false;
        }
        let mut full = self.tail.clone();
        full.extend(candidate.chars());
        let tlen = self.target.len();
        for pos in 0..full.len().saturating_sub(tlen - 1) {
            let end = pos + tlen;
            if end <= self.tail.len() {
                continue;
            }
            if !self.eq_target_at(&full, pos) || !self.left_boundary_ok(&full, pos) {
                continue;
            }
            if end == full.len() || !is_word_char(full[end]) {
                return true;
            }
        }
        false
    }

    /// Number of pending matches `candidate` would confirm (0 or 1).
    ///
    /// Used when testing a trigger: a word that ended the previous delta has
    /// already been sampled but not yet credited to the count.
    pub fn pending_confirmed_by(&self, candidate: &str) -> usize {
        match candidate.chars().next() {
            Some(c) if self.pending && !is_word_char(c) => 1,
            _ => 0,
        }
    }

    /// Forget the tail after an injection; injected text is never scanned.
    pub fn reset_tail(&mut self) {
        self.tail.clear();
        self.before_tail_is_word = false;
        self.pending = false;
    }
}

/// Literal marker detector (think-phase delimiters) over token deltas.
///
/// Unlike [`WaitMatcher`] there are no word boundaries: a marker completes the
/// moment its final character arrives.
#[derive(Debug, Clone)]
pub struct MarkerScanner {
    marker: Vec<char>,
    tail: Vec<char>,
}

impl MarkerScanner {
    pub fn new(marker: &str) -> Self {
        let marker: Vec<char> = marker.chars().collect();
        assert!(!marker.is_empty(), "marker must be non-empty");
        Self {
            marker,
            tail: Vec::new(),
        }
    }

    fn find_completion(&self, candidate: &str) -> bool {
        let mut full = self.tail.clone();
        full.extend(candidate.chars());
        let mlen = self.marker.len();
        if full.len() < mlen {
            return false;
        }
        for pos in 0..=full.len() - mlen {
            let end = pos + mlen;
            if end <= self.tail.len() {
                continue;
            }
            if full[pos..end] == self.marker[..] {
                return true;
            }
        }
        false
    }

    /// Feed one delta; true if the marker completed inside it.
    pub fn push(&mut self, delta: &str) -> bool {
        let hit = self.find_completion(delta);
        let mut full = self.tail.clone();
        full.extend(delta.chars());
        let keep = self.marker.len() - 1;
        if full.len() > keep {
            self.tail = full[full.len() - keep..].to_vec();
        } else {
            self.tail = full;
        }
        hit
    }

    /// Would `candidate` complete the marker if it were the next delta?
    pub fn completes_with(&self, candidate: &str) -> bool {
        self.find_completion(candidate)
    }

    pub fn reset_tail(&mut self) {
        self.tail.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_delta_with_punctuation() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("Wait,"), 1);
        assert_eq!(m.finish(), 0);
    }

    #[test]
    fn match_split_across_deltas_counted_once() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("Wa"), 0);
        assert_eq!(m.push("it "), 1);
        assert_eq!(m.finish(), 0);
    }

    #[test]
    fn word_boundary_rejects_waiter() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("waiter"), 0);
        assert_eq!(m.finish(), 0);

        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("wait"), 0); // pending
        assert_eq!(m.push("er"), 0); // invalidated
        assert_eq!(m.finish(), 0);
    }

    #[test]
    fn pending_confirmed_at_end_of_stream() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("hmm, wait"), 0);
        assert_eq!(m.finish(), 1);
    }

    #[test]
    fn pending_confirmed_by_next_delta() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push(" wait"), 0);
        assert_eq!(m.pending_confirmed_by(" no"), 1);
        assert_eq!(m.push(" no"), 1);
    }

    #[test]
    fn case_sensitive_mode() {
        let mut m = WaitMatcher::new("wait", true);
        assert_eq!(m.push("Wait "), 0);
        assert_eq!(m.push("wait "), 1);
    }

    #[test]
    fn completes_with_candidate_token() {
        let mut m = WaitMatcher::default_wait();
        m.push("let me think.");
        assert!(m.completes_with(" wait"));
        assert!(m.completes_with(" Wait,"));
        assert!(!m.completes_with(" waiter"));
        assert!(!m.completes_with(" wa"));
    }

    #[test]
    fn completes_with_spanning_tail() {
        let mut m = WaitMatcher::default_wait();
        m.push("so wai");
        assert!(m.completes_with("t"));
        assert!(m.completes_with("t,"));
        assert!(!m.completes_with("ting"));
    }

    #[test]
    fn underscore_is_word_char() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("wait_list "), 0);
    }

    #[test]
    fn reset_tail_drops_pending() {
        let mut m = WaitMatcher::default_wait();
        m.push(" wait");
        m.reset_tail();
        assert_eq!(m.push(" and "), 0);
        assert_eq!(m.finish(), 0);
    }

    #[test]
    fn adjacent_occurrences() {
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("wait wait wait "), 3);
        // no boundary between fused words
        let mut m = WaitMatcher::default_wait();
        assert_eq!(m.push("waitwait "), 0);
    }

    #[test]
    fn marker_whole_delta() {
        let mut s = MarkerScanner::new("</think>");
        assert!(!s.push("almost done"));
        assert!(s.push("</think>"));
    }

    #[test]
    fn marker_split_across_deltas() {
        let mut s = MarkerScanner::new("</think>");
        assert!(!s.push("</th"));
        assert!(s.push("ink>"));
        // not re-reported on later pushes
        assert!(!s.push(" after"));
    }

    #[test]
    fn marker_completes_with_peek() {
        let mut s = MarkerScanner::new("</think>");
        s.push("reasoning goes here");
        assert!(s.completes_with("</think>"));
        assert!(s.completes_with(" </think>\n"));
        assert!(!s.completes_with("</thin"));
        s.push("</thin");
        assert!(s.completes_with("k>"));
    }
}
