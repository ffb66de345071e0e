use serde_json::Value;

/// Extracts the judge's pick from free text.
///
/// The first JSON object in `text` whose only key is `"choice"` decides:
/// `null` means no candidate, an integer in `1..=batch_len` picks one. Any
/// other value in that object (array, string, out-of-range number) makes the
/// response unparseable. Objects without a `choice` key are skipped.
pub fn parse_choice(text: &str, batch_len: usize) -> Result<Option<usize>, String> {
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let Some(choice) = obj.get("choice") else {
            continue;
        };
        if obj.len() != 1 {
            return Err(format!(
                "answer object has extra keys: {}",
                Value::Object(obj.clone())
            ));
        }
        return match choice {
            Value::Null => Ok(None),
            Value::Number(n) => match n.as_u64() {
                Some(k) if (1..=batch_len as u64).contains(&k) => Ok(Some(k as usize)),
                _ => Err(format!("choice {n} outside 1..={batch_len}")),
            },
            other => Err(format!("choice must be an integer or null, found {other}")),
        };
    }
    Err("no {\"choice\": ...} object in response".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_answers() {
        assert_eq!(parse_choice(r#"{"choice": 2}"#, 3), Ok(Some(2)));
        assert_eq!(parse_choice(r#"{"choice": null}"#, 3), Ok(None));
    }

    #[test]
    fn answer_embedded_in_prose() {
        let text = "Looking at the views, {\"reason\": \"left of sink\"} so the answer is\n```json\n{\"choice\": 1}\n``` and not {\"choice\": 3}";
        assert_eq!(parse_choice(text, 3), Ok(Some(1)));
    }

    #[test]
    fn malformed_brace_is_skipped() {
        assert_eq!(parse_choice(r#"{oops {"choice": 4}"#, 4), Ok(Some(4)));
    }

    #[test]
    fn invalid_answers() {
        assert!(parse_choice(r#"{"choice": [1, 2]}"#, 3).is_err());
        assert!(parse_choice(r#"{"choice": 0}"#, 3).is_err());
        assert!(parse_choice(r#"{"choice": 4}"#, 3).is_err());
        assert!(parse_choice(r#"{"choice": "2"}"#, 3).is_err());
        assert!(parse_choice(r#"{"choice": 1, "also": 2}"#, 3).is_err());
        assert!(parse_choice("candidate 2", 3).is_err());
        assert!(parse_choice("", 3).is_err());
    }
}
