use std::io::BufRead;

/// One line of an image list: the image path plus any trailing
/// whitespace-separated fields (bundler's `list.txt` carries `0 focal`,
/// query lists may carry `width height [focal]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ListEntry {
    pub name: String,
    pub fields: Vec<String>,
}

impl ListEntry {
    /// Interprets the trailing fields as `width height [focal_px]`.
    pub fn query_dims(&self) -> Option<(u32, u32, Option<f64>)> {
        let w = self.fields.first()?.parse().ok()?;
        let h = self.fields.get(1)?.parse().ok()?;
        let f = self
            .fields
            .get(2)
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|f| *f > 0.0);
        Some((w, h, f))
    }
}

/// Newline-separated list; blank lines are skipped and entries trimmed.
pub fn parse_image_list<R: BufRead>(reader: R) -> std::io::Result<Vec<ListEntry>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        let Some(name) = it.next() else { continue };
        out.push(ListEntry {
            name: name.to_string(),
            fields: it.map(str::to_string).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &str) -> Vec<String> {
        parse_image_list(s.as_bytes())
            .unwrap()
            .into_iter()
            .map(|e| e.name)
            .collect()
    }

    #[test]
    fn order_preserved() {
        assert_eq!(names("a.jpg\nb.jpg\n"), vec!["a.jpg", "b.jpg"]);
    }

    #[test]
    fn empty_and_blank() {
        assert!(names("").is_empty());
        assert_eq!(names("\n  \nx.jpg\n\n"), vec!["x.jpg"]);
    }

    #[test]
    fn trailing_whitespace_trimmed() {
        assert_eq!(names("query/img1.jpg   \t\n"), vec!["query/img1.jpg"]);
        assert_eq!(names("q.jpg  \r\n"), vec!["q.jpg"]);
    }

    #[test]
    fn query_fields() {
        let e = &parse_image_list("q.jpg 640 480 700.5\nr.jpg 0 1\n".as_bytes()).unwrap();
        assert_eq!(e[0].query_dims(), Some((640, 480, Some(700.5))));
        assert_eq!(e[1].query_dims(), Some((0, 1, None)));
    }
}
