//! Synthetic school databases with a planted class rule.
//!
//! Professors teach courses, students enroll in courses, and each professor
//! has a favourite movie. A professor's label ("popular") is decided by one
//! feature: either the genre of the favourite movie or the average grade of
//! the students enrolled in the professor's courses.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{parse_schema, SchemaCatalog};
use crate::error::{Error, Result};
use crate::features::{Aggregator, FeatureDescriptor};
use crate::joinpath::{Hop, JoinPath};
use crate::storage::{Database, LoadOptions, RawTable};

const SCHOOL_SCHEMA: &str = r#"
target = "Professor.popular"

[[tables]]
name = "Professor"
file = "Professor.csv"
columns = ["PID:pk", "popular:cat", "age:num", "MID:fk(Movie.MID)"]

[[tables]]
name = "Course"
file = "Course.csv"
columns = ["CID:pk", "PID:fk(Professor.PID)", "level:cat"]

[[tables]]
name = "Enrolled"
file = "Enrolled.csv"
columns = ["EID:pk", "CID:fk(Course.CID)", "SID:fk(Student.SID)"]

[[tables]]
name = "Student"
file = "Student.csv"
columns = ["SID:pk", "grade:num", "year:cat"]

[[tables]]
name = "Movie"
file = "Movie.csv"
columns = ["MID:pk", "genre:cat"]
"#;

pub const POSITIVE: &str = "yes";
pub const NEGATIVE: &str = "no";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantedRule {
    /// Positive iff the average grade over all enrollments in the
    /// professor's courses exceeds `threshold`. Courseless professors are
    /// negative.
    AvgGrade { threshold: f64 },
    /// Positive iff the favourite movie has this genre. A dangling movie
    /// reference is negative.
    MovieGenre { genre: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchoolSpec {
    pub professors: usize,
    pub courses_per_professor: usize,
    pub enrollments_per_course: usize,
    pub students: usize,
    pub movies: usize,
    pub genres: Vec<String>,
    pub rule: PlantedRule,
    /// Probability of flipping each label.
    pub noise: f64,
    /// Fraction of professors without courses.
    pub courseless_fraction: f64,
    /// Fraction of professors whose movie reference points nowhere.
    pub dangling_movie_fraction: f64,
    /// Enrolled students' grades lie within this distance of the
    /// professor's hidden quality level where possible.
    pub grade_spread: f64,
}

impl Default for SchoolSpec {
    fn default() -> Self {
        SchoolSpec {
            professors: 100,
            courses_per_professor: 3,
            enrollments_per_course: 10,
            students: 500,
            movies: 20,
            genres: ["action", "comedy", "documentary", "drama", "horror"]
                .map(String::from)
                .to_vec(),
            rule: PlantedRule::AvgGrade { threshold: 70.0 },
            noise: 0.0,
            courseless_fraction: 0.0,
            dangling_movie_fraction: 0.0,
            grade_spread: 10.0,
        }
    }
}

impl SchoolSpec {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Generator(m.to_string()));
        if self.professors == 0 || self.movies == 0 {
            return fail("professors and movies must be at least 1");
        }
        if self.courses_per_professor == 0 && self.enrollments_per_course > 0 {
            return fail("enrollments need at least one course per professor");
        }
        if self.enrollments_per_course > 0 && self.students == 0 {
            return fail("enrollments need at least one student");
        }
        if self.genres.is_empty() {
            return fail("at least one genre is required");
        }
        for (name, p) in [
            ("noise", self.noise),
            ("courseless_fraction", self.courseless_fraction),
            ("dangling_movie_fraction", self.dangling_movie_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Generator(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.grade_spread.is_nan() || self.grade_spread < 0.0 {
            return fail("grade_spread must be nonnegative");
        }
        match &self.rule {
            PlantedRule::AvgGrade { threshold } if !threshold.is_finite() => {
                fail("threshold must be finite")
            }
            PlantedRule::MovieGenre { genre } if !self.genres.contains(genre) => {
                Err(Error::Generator(format!("genre `{genre}` is not among the genres")))
            }
            _ => Ok(()),
        }
    }
}

/// A generated database in raw form, with its schema and planted feature.
#[derive(Clone, Debug)]
pub struct SyntheticDb {
    pub catalog: SchemaCatalog,
    pub tables: BTreeMap<String, RawTable>,
    pub planted: FeatureDescriptor,
    /// Labels before noise, in professor order.
    pub clean_labels: Vec<String>,
    pub flipped: usize,
}

impl SyntheticDb {
    pub fn database(&self, options: &LoadOptions) -> Result<Database> {
        Database::from_raw(&self.catalog, self.tables.clone(), options)
    }

    /// Writes `schema.toml` and one CSV per table into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let schema = dir.join("schema.toml");
        std::fs::write(&schema, self.catalog.to_toml()).map_err(|e| Error::io(&schema, e))?;
        for t in self.catalog.tables() {
            let path = dir.join(&t.source_file);
            let raw = &self.tables[&t.name];
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv {
                table: t.name.clone(),
                message: e.to_string(),
            })?;
            let csv_err = |e: csv::Error| Error::Csv {
                table: t.name.clone(),
                message: e.to_string(),
            };
            w.write_record(&raw.header).map_err(csv_err)?;
            for row in &raw.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn school_catalog() -> SchemaCatalog {
    parse_schema(SCHOOL_SCHEMA).expect("built-in schema is valid")
}

fn hop(from_table: &str, from_column: &str, to_table: &str, to_column: &str) -> Hop {
    Hop {
        to_table: to_table.into(),
        to_column: to_column.into(),
        from_table: from_table.into(),
        from_column: from_column.into(),
    }
}

/// Professor -> Course -> Enrolled -> Student.
pub fn grade_path() -> JoinPath {
    JoinPath::from_hops(
        "Professor",
        vec![
            hop("Professor", "PID", "Course", "PID"),
            hop("Course", "CID", "Enrolled", "CID"),
            hop("Enrolled", "SID", "Student", "SID"),
        ],
    )
    .expect("hops chain")
}

pub fn movie_path() -> JoinPath {
    JoinPath::from_hops("Professor", vec![hop("Professor", "MID", "Movie", "MID")]).expect("hops chain")
}

pub fn generate_school_db(seed: u64, spec: &SchoolSpec) -> Result<SyntheticDb> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let years = ["first", "second", "third", "fourth"];
    let levels = ["advanced", "intro"];

    let mut movies = RawTable {
        header: vec!["MID".into(), "genre".into()],
        rows: Vec::with_capacity(spec.movies),
    };
    let mut genre_of = Vec::with_capacity(spec.movies);
    for m in 0..spec.movies {
        // cycle through the genres first so each one occurs
        let genre = if m < spec.genres.len() {
            spec.genres[m].clone()
        } else {
            spec.genres.choose(&mut rng).expect("nonempty").clone()
        };
        movies.rows.push(vec![format!("m{m}"), genre.clone()]);
        genre_of.push(genre);
    }

    let mut students = RawTable {
        header: vec!["SID".into(), "grade".into(), "year".into()],
        rows: Vec::with_capacity(spec.students),
    };
    let mut grades = Vec::with_capacity(spec.students);
    for s in 0..spec.students {
        let grade: u32 = rng.gen_range(30..=100);
        grades.push(grade as f64);
        let year = years.choose(&mut rng).expect("nonempty");
        students.rows.push(vec![format!("s{s}"), grade.to_string(), (*year).to_string()]);
    }
    let mut by_grade: Vec<usize> = (0..spec.students).collect();
    by_grade.sort_by(|&a, &b| grades[a].total_cmp(&grades[b]).then(a.cmp(&b)));

    let mut professors = RawTable {
        header: vec!["PID".into(), "popular".into(), "age".into(), "MID".into()],
        rows: Vec::with_capacity(spec.professors),
    };
    let mut courses = RawTable {
        header: vec!["CID".into(), "PID".into(), "level".into()],
        rows: Vec::new(),
    };
    let mut enrolled = RawTable {
        header: vec!["EID".into(), "CID".into(), "SID".into()],
        rows: Vec::new(),
    };
    let mut clean_labels = Vec::with_capacity(spec.professors);
    let mut flipped = 0;
    for p in 0..spec.professors {
        let pid = format!("p{p}");
        let quality: f64 = rng.gen_range(40.0..100.0);
        let courseless = rng.gen_bool(spec.courseless_fraction);
        let mut grade_sum = 0.0;
        let mut grade_count = 0usize;
        if !courseless {
            // students whose grade lies near the professor's quality
            let lo = by_grade.partition_point(|&s| grades[s] < quality - spec.grade_spread);
            let hi = by_grade.partition_point(|&s| grades[s] <= quality + spec.grade_spread);
            for _ in 0..spec.courses_per_professor {
                let cid = format!("c{}", courses.rows.len());
                let level = levels.choose(&mut rng).expect("nonempty");
                courses.rows.push(vec![cid.clone(), pid.clone(), (*level).to_string()]);
                for _ in 0..spec.enrollments_per_course {
                    let s = if hi > lo {
                        by_grade[rng.gen_range(lo..hi)]
                    } else {
                        // nobody in range: take the closest grade
                        let at = lo.min(spec.students - 1);
                        by_grade[at]
                    };
                    grade_sum += grades[s];
                    grade_count += 1;
                    enrolled
                        .rows
                        .push(vec![format!("e{}", enrolled.rows.len()), cid.clone(), format!("s{s}")]);
                }
            }
        }
        let dangling = rng.gen_bool(spec.dangling_movie_fraction);
        let movie = rng.gen_range(0..spec.movies);
        let mid = if dangling {
            format!("gone{p}")
        } else {
            format!("m{movie}")
        };
        let positive = match &spec.rule {
            PlantedRule::AvgGrade { threshold } => {
                grade_count > 0 && grade_sum / grade_count as f64 > *threshold
            }
            PlantedRule::MovieGenre { genre } => !dangling && genre_of[movie] == *genre,
        };
        let clean = if positive { POSITIVE } else { NEGATIVE };
        clean_labels.push(clean.to_string());
        let label = if rng.gen_bool(spec.noise) {
            flipped += 1;
            if positive {
                NEGATIVE
            } else {
                POSITIVE
            }
        } else {
            clean
        };
        let age: u32 = rng.gen_range(28..=70);
        professors
            .rows
            .push(vec![pid, label.to_string(), age.to_string(), mid]);
    }

    let planted = match &spec.rule {
        PlantedRule::AvgGrade { .. } => FeatureDescriptor::new(grade_path(), Some("grade"), Aggregator::Avg),
        PlantedRule::MovieGenre { .. } => {
            FeatureDescriptor::new(movie_path(), Some("genre"), Aggregator::Identity)
        }
    };
    let tables = BTreeMap::from([
        ("Professor".to_string(), professors),
        ("Course".to_string(), courses),
        ("Enrolled".to_string(), enrolled),
        ("Student".to_string(), students),
        ("Movie".to_string(), movies),
    ]);
    Ok(SyntheticDb {
        catalog: school_catalog(),
        tables,
        planted,
        clean_labels,
        flipped,
    })
}
