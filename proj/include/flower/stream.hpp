#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Geometry and layout of a synthetic continual-learning stream.
struct StreamSpec {
  std::size_t input_dim = 16;
  std::size_t base_classes = 10;          // B
  std::size_t base_samples_per_class = 100;
  std::size_t session_count = 4;
  std::size_t ways = 2;                   // N
  std::size_t shots = 5;                  // K
  std::size_t test_samples_per_class = 20;
  double cluster_spread = 0.25;
  std::uint64_t seed = 1;

  void validate() const {
    FLOWER_CHECK(input_dim >= 1, "StreamSpec: input_dim must be >= 1");
    FLOWER_CHECK(base_classes >= 1, "StreamSpec: at least one base class required");
    FLOWER_CHECK(base_samples_per_class >= 1,
                 "StreamSpec: base_samples_per_class must be >= 1");
    FLOWER_CHECK(shots >= 1, "StreamSpec: shots must be >= 1");
    FLOWER_CHECK(session_count == 0 || ways >= 1,
                 "StreamSpec: ways must be >= 1 when sessions exist");
    FLOWER_CHECK(test_samples_per_class >= 1,
                 "StreamSpec: test_samples_per_class must be >= 1");
    FLOWER_CHECK(cluster_spread >= 0.0, "StreamSpec: spread must be >= 0");
  }

  std::size_t total_classes() const {
    return base_classes + ways * session_count;
  }
};

/// A full stream: the data-rich base task, the few-shot sessions, and one
/// held-out test pool covering every class.
struct Stream {
  Batch base;
  std::vector<Batch> sessions;
  Batch test_pool;
};

namespace detail {

inline Tensor unit_sphere_point(std::size_t dim, Rng& rng) {
  Tensor v = rng.normal_tensor({dim});
  double norm = l2_norm(v);
  while (norm == 0.0) {
    v = rng.normal_tensor({dim});
    norm = l2_norm(v);
  }
  for (std::size_t d = 0; d < dim; ++d) v[d] /= norm;
  return v;
}

inline void append_sample(Batch& batch, std::size_t row, const Tensor& mean,
                          double spread, int label, Rng& rng) {
  for (std::size_t d = 0; d < mean.size(); ++d)
    batch.features.at(row, d) = mean[d] + spread * rng.normal();
  batch.labels.push_back(label);
}

}  // namespace detail

/// Deterministic synthetic stream: class means on the unit hypersphere,
/// samples Gaussian around them. Class ids are assigned in order: base
/// classes 0..B-1, then N fresh ids per session.
inline Stream generate_stream(const StreamSpec& spec) {
  spec.validate();
  std::size_t total = spec.total_classes();

  std::vector<Tensor> means;
  means.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    Rng rng(derive_seed(spec.seed, {0x6d65616e, c}));
    means.push_back(detail::unit_sphere_point(spec.input_dim, rng));
  }

  Stream stream;
  std::size_t base_n = spec.base_classes * spec.base_samples_per_class;
  stream.base.features = Tensor({base_n, spec.input_dim});
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.base_classes; ++c) {
    Rng rng(derive_seed(spec.seed, {0x74726169, c}));
    for (std::size_t i = 0; i < spec.base_samples_per_class; ++i)
      detail::append_sample(stream.base, row++, means[c], spec.cluster_spread,
                            static_cast<int>(c), rng);
  }

  for (std::size_t s = 0; s < spec.session_count; ++s) {
    Batch session;
    session.features = Tensor({spec.ways * spec.shots, spec.input_dim});
    std::size_t r = 0;
    for (std::size_t w = 0; w < spec.ways; ++w) {
      std::size_t c = spec.base_classes + s * spec.ways + w;
      Rng rng(derive_seed(spec.seed, {0x73657373, c}));
      for (std::size_t k = 0; k < spec.shots; ++k)
        detail::append_sample(session, r++, means[c], spec.cluster_spread,
                              static_cast<int>(c), rng);
    }
    stream.sessions.push_back(std::move(session));
  }

  stream.test_pool.features =
      Tensor({total * spec.test_samples_per_class, spec.input_dim});
  row = 0;
  for (std::size_t c = 0; c < total; ++c) {
    Rng rng(derive_seed(spec.seed, {0x74657374, c}));
    for (std::size_t i = 0; i < spec.test_samples_per_class; ++i)
      detail::append_sample(stream.test_pool, row++, means[c],
                            spec.cluster_spread, static_cast<int>(c), rng);
  }
  return stream;
}

/// Layout for partitioning an external feature CSV into a stream.
struct CsvSchema {
  std::size_t base_classes = 1;   // B
  std::size_t session_count = 0;
  std::size_t ways = 1;           // N
  std::size_t shots = 1;          // K
  double test_fraction = 0.2;     // used when no split column is present
  std::string class_order_path;   // optional: one class id per line
  std::uint64_t seed = 1;

  void validate() const {
    FLOWER_CHECK(base_classes >= 1, "CsvSchema: at least one base class required");
    FLOWER_CHECK(shots >= 1, "CsvSchema: shots must be >= 1");
    FLOWER_CHECK(session_count == 0 || ways >= 1,
                 "CsvSchema: ways must be >= 1 when sessions exist");
    FLOWER_CHECK(test_fraction > 0.0 && test_fraction < 1.0,
                 "CsvSchema: test_fraction must lie in (0,1)");
  }
};

namespace detail {

struct CsvRow {
  std::vector<double> features;
  int label = 0;
  bool has_split = false;
  bool is_test = false;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline Batch to_batch(const std::vector<const CsvRow*>& rows, std::size_t dim) {
  FLOWER_CHECK(!rows.empty(), "csv: empty partition");
  Batch b;
  b.features = Tensor({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d)
      b.features.at(i, d) = rows[i]->features[d];
    b.labels.push_back(rows[i]->label);
  }
  return b;
}

}  // namespace detail

/// Reads a feature CSV (header `f0,...,fN,label[,split]`, comma-separated,
/// no quoting) and partitions its classes into base task + sessions.
/// Class order comes from the schema's class-order file when given,
/// otherwise from a seeded shuffle. Train/test splits come from the split
/// column when present, otherwise from a seeded stratified split.
inline Stream ingest_csv(const std::string& path, const CsvSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  FLOWER_CHECK(in.good(), "csv: cannot open " + path);

  std::string line;
  FLOWER_CHECK(static_cast<bool>(std::getline(in, line)), "csv: empty file");
  std::vector<std::string> header = detail::split_csv_line(line);
  FLOWER_CHECK(header.size() >= 2, "csv: header must list features and label");
  bool has_split_col = header.back() == "split";
  std::size_t label_col = has_split_col ? header.size() - 2 : header.size() - 1;
  std::size_t dim = label_col;
  FLOWER_CHECK(dim >= 1, "csv: no feature columns");
  for (std::size_t d = 0; d < dim; ++d)
    FLOWER_CHECK(header[d] == "f" + std::to_string(d),
                 "csv: header row required; expected column 'f" +
                     std::to_string(d) + "', found '" + header[d] + "'");
  FLOWER_CHECK(header[label_col] == "label",
               "csv: header row required; expected 'label' column");

  std::vector<detail::CsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    FLOWER_CHECK(cells.size() == header.size(),
                 "csv: line " + std::to_string(line_no) + ": expected " +
                     std::to_string(header.size()) + " cells, found " +
                     std::to_string(cells.size()));
    detail::CsvRow row;
    row.features.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      try {
        std::size_t used = 0;
        row.features[d] = std::stod(cells[d], &used);
        FLOWER_CHECK(used == cells[d].size(), "trailing characters");
      } catch (const std::exception&) {
        throw Error("csv: line " + std::to_string(line_no) +
                    ": non-numeric feature '" + cells[d] + "'");
      }
    }
    try {
      std::size_t used = 0;
      row.label = std::stoi(cells[label_col], &used);
      FLOWER_CHECK(used == cells[label_col].size(), "trailing characters");
    } catch (const std::exception&) {
      throw Error("csv: line " + std::to_string(line_no) + ": missing or "
                  "non-integer label '" + cells[label_col] + "'");
    }
    FLOWER_CHECK(row.label >= 0, "csv: line " + std::to_string(line_no) +
                                     ": class ids must be >= 0");
    if (has_split_col) {
      row.has_split = true;
      const std::string& s = cells.back();
      FLOWER_CHECK(s == "train" || s == "test",
                   "csv: line " + std::to_string(line_no) +
                       ": split must be 'train' or 'test'");
      row.is_test = s == "test";
    }
    rows.push_back(std::move(row));
  }
  FLOWER_CHECK(!rows.empty(), "csv: no data rows");

  // group rows by class
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < rows.size(); ++i)
    by_class[rows[i].label].push_back(i);

  // derive the train/test split when the file does not carry one
  if (!has_split_col) {
    for (auto& [label, members] : by_class) {
      Rng rng(derive_seed(schema.seed, {0x73706c69, static_cast<std::uint64_t>(label)}));
      std::vector<std::size_t> order = members;
      rng.shuffle(order);
      std::size_t n_test = std::max<std::size_t>(
          1, static_cast<std::size_t>(schema.test_fraction *
                                      static_cast<double>(order.size())));
      for (std::size_t i = 0; i < order.size(); ++i)
        rows[order[i]].is_test = i < n_test;
    }
  }

  for (const auto& [label, members] : by_class) {
    std::size_t n_train = 0;
    for (std::size_t i : members)
      if (!rows[i].is_test) ++n_train;
    FLOWER_CHECK(n_train >= schema.shots && n_train < members.size(),
                 "csv: class " + std::to_string(label) +
                     " needs at least K+1 samples with a train/test split");
  }

  // class order: file, or seeded shuffle
  std::vector<int> order;
  if (!schema.class_order_path.empty()) {
    std::ifstream of(schema.class_order_path);
    FLOWER_CHECK(of.good(), "csv: cannot open class-order file " +
                                schema.class_order_path);
    std::string entry;
    while (std::getline(of, entry)) {
      if (entry.empty()) continue;
      order.push_back(std::stoi(entry));
      FLOWER_CHECK(by_class.count(order.back()),
                   "csv: class-order lists unknown class " + entry);
    }
  } else {
    for (const auto& [label, _] : by_class) order.push_back(label);
    Rng rng(derive_seed(schema.seed, {0x6f726465}));
    rng.shuffle(order);
  }
  std::size_t needed = schema.base_classes + schema.ways * schema.session_count;
  FLOWER_CHECK(order.size() == needed,
               "csv: layout needs " + std::to_string(needed) + " classes, file has " +
                   std::to_string(order.size()));

  auto train_rows = [&](int label) {
    std::vector<const detail::CsvRow*> out;
    for (std::size_t i : by_class.at(label))
      if (!rows[i].is_test) out.push_back(&rows[i]);
    return out;
  };

  Stream stream;
  std::vector<const detail::CsvRow*> base_rows;
  for (std::size_t c = 0; c < schema.base_classes; ++c)
    for (const detail::CsvRow* r : train_rows(order[c]))
      base_rows.push_back(r);
  stream.base = detail::to_batch(base_rows, dim);

  for (std::size_t s = 0; s < schema.session_count; ++s) {
    std::vector<const detail::CsvRow*> session_rows;
    for (std::size_t w = 0; w < schema.ways; ++w) {
      int label = order[schema.base_classes + s * schema.ways + w];
      std::vector<const detail::CsvRow*> all = train_rows(label);
      // K-shot: a seeded choice of exactly K train samples
      Rng rng(derive_seed(schema.seed,
                          {0x73686f74, static_cast<std::uint64_t>(label)}));
      std::vector<std::size_t> idx(all.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx);
      for (std::size_t k = 0; k < schema.shots; ++k)
        session_rows.push_back(all[idx[k]]);
    }
    stream.sessions.push_back(detail::to_batch(session_rows, dim));
  }

  std::vector<const detail::CsvRow*> test_rows;
  for (const auto& [label, members] : by_class)
    for (std::size_t i : members)
      if (rows[i].is_test) test_rows.push_back(&rows[i]);
  stream.test_pool = detail::to_batch(test_rows, dim);
  return stream;
}

}  // namespace flower
