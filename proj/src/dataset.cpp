#include "fedsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

using nlohmann::json;

Batch DeviceShard::train_batch() const { return batch_of(train_index); }

Batch DeviceShard::test_batch() const { return batch_of(test_index); }

Batch DeviceShard::batch_of(std::span<const std::uint32_t> row_ids) const {
  Batch b;
  b.features = features.data();
  b.cols = cols;
  b.labels = labels.data();
  b.rows = row_ids;
  return b;
}

std::size_t FederatedDataset::total_train_samples() const {
  std::size_t n = 0;
  for (const auto& s : shards) n += s.train_count();
  return n;
}

void FederatedDataset::recompute_weights() {
  weights.resize(shards.size());
  double total = 0.0;
  for (const auto& s : shards) total += static_cast<double>(s.train_count());
  if (total <= 0.0) throw ValidationError("dataset has no training samples");
  for (std::size_t k = 0; k < shards.size(); ++k) {
    weights[k] = static_cast<double>(shards[k].train_count()) / total;
  }
}

void FederatedDataset::check_invariants() const {
  if (shards.empty()) throw ValidationError("dataset has no shards");
  if (weights.size() != shards.size()) {
    throw ValidationError("weight count does not match shard count");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw ValidationError("device weights do not sum to 1");
  }
  for (const auto& s : shards) {
    if (s.rows * s.cols != s.features.size() || s.labels.size() != s.rows) {
      throw ValidationError("shard storage sizes inconsistent");
    }
    if (s.cols != input_dim) throw ValidationError("shard width mismatch");
    if (s.train_index.empty()) {
      throw ValidationError("shard has no training samples");
    }
    for (std::uint32_t y : s.labels) {
      if (y >= num_classes) throw ValidationError("label out of range");
    }
    std::vector<bool> seen(s.rows, false);
    for (auto idx : s.train_index) {
      if (idx >= s.rows || seen[idx]) {
        throw ValidationError("bad train index");
      }
      seen[idx] = true;
    }
    for (auto idx : s.test_index) {
      if (idx >= s.rows || seen[idx]) {
        throw ValidationError("bad test index");
      }
      seen[idx] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ValidationError("train/test indices do not cover all rows");
    }
  }
}

void SyntheticSpec::validate() const {
  if (alpha < 0.0) throw ValidationError("alpha must be >= 0");
  if (beta < 0.0) throw ValidationError("beta must be >= 0");
  if (num_devices < 1) throw ValidationError("num_devices must be >= 1");
  if (input_dim == 0 || num_classes == 0) {
    throw ValidationError("synthetic dimensions must be positive");
  }
  if (power_law_exponent <= 0.0) {
    throw ValidationError("power_law_exponent must be > 0");
  }
  if (min_samples < 1 || max_samples < min_samples) {
    throw ValidationError("need 1 <= min_samples <= max_samples");
  }
}

namespace {

// Pareto draw clamped to [min, max]: round(min * U^(-1/exponent)), U in (0,1].
std::uint32_t power_law_count(RngStream& rng, double exponent,
                              std::uint32_t min_samples,
                              std::uint32_t max_samples) {
  const double u = 1.0 - rng.next_double();
  const double raw =
      static_cast<double>(min_samples) * std::pow(u, -1.0 / exponent);
  const double rounded = std::llround(std::min(
      raw, static_cast<double>(max_samples) + 1.0));
  return static_cast<std::uint32_t>(std::clamp(
      rounded, static_cast<double>(min_samples),
      static_cast<double>(max_samples)));
}

std::uint32_t argmax_label(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return static_cast<std::uint32_t>(best);
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  return json{{"alpha", s.alpha},
              {"beta", s.beta},
              {"iid", s.iid},
              {"num_devices", s.num_devices},
              {"input_dim", s.input_dim},
              {"num_classes", s.num_classes},
              {"power_law_exponent", s.power_law_exponent},
              {"min_samples", s.min_samples},
              {"max_samples", s.max_samples},
              {"seed", s.seed}};
}

}  // namespace

FederatedDataset generate_synthetic(const SyntheticSpec& spec,
                                    SyntheticGroundTruth* truth) {
  spec.validate();

  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.num_classes;

  RngStream counts(spec.seed, StreamPurpose::dataset_counts);
  std::vector<std::uint32_t> sample_counts(spec.num_devices);
  for (auto& n : sample_counts) {
    n = power_law_count(counts, spec.power_law_exponent, spec.min_samples,
                        spec.max_samples);
  }

  // Per-feature stddev: diagonal covariance with Sigma_{j,j} = j^-1.2,
  // j starting at 1.
  std::vector<double> feature_stddev(d);
  for (std::size_t j = 0; j < d; ++j) {
    feature_stddev[j] = std::pow(static_cast<double>(j + 1), -0.6);
  }

  // IID: a single shared generating model, drawn from its own stream.
  ParamVector shared_model;
  if (spec.iid) {
    RngStream shared(spec.seed, StreamPurpose::dataset_model, /*round=*/1);
    shared_model = ParamVector(c * d + c);
    for (std::size_t i = 0; i < shared_model.size(); ++i) {
      shared_model[i] = shared.next_normal(0.0, 1.0);
    }
  }

  FederatedDataset out;
  out.input_dim = d;
  out.num_classes = c;
  if (truth != nullptr) {
    truth->device_models.clear();
    truth->feature_means.clear();
  }

  std::vector<double> logits(c);
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    ParamVector model;
    std::vector<double> mean(d, 0.0);
    if (spec.iid) {
      model = shared_model;
    } else {
      RngStream model_rng(spec.seed, StreamPurpose::dataset_model, 0, k);
      // Draw order is pinned: u_k, W row-major, b, B_k, v entries.
      const double u_k = model_rng.next_normal(0.0, std::sqrt(spec.alpha));
      model = ParamVector(c * d + c);
      for (std::size_t i = 0; i < model.size(); ++i) {
        model[i] = model_rng.next_normal(u_k, 1.0);
      }
      const double mean_center = model_rng.next_normal(0.0, std::sqrt(spec.beta));
      for (std::size_t j = 0; j < d; ++j) {
        mean[j] = model_rng.next_normal(mean_center, 1.0);
      }
    }

    DeviceShard shard;
    shard.device_id = static_cast<std::uint32_t>(k);
    shard.rows = sample_counts[k];
    shard.cols = d;
    shard.features.resize(shard.rows * d);
    shard.labels.resize(shard.rows);

    RngStream feature_rng(spec.seed, StreamPurpose::dataset_features, 0, k);
    for (std::size_t i = 0; i < shard.rows; ++i) {
      double* x = shard.features.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = feature_rng.next_normal(mean[j], feature_stddev[j]);
      }
      for (std::size_t r = 0; r < c; ++r) {
        const double* wr = model.data() + r * d;
        double acc = model[c * d + r];
        for (std::size_t j = 0; j < d; ++j) acc += wr[j] * x[j];
        logits[r] = acc;
      }
      shard.labels[i] = argmax_label(logits);
    }
    shard.train_index.resize(shard.rows);
    std::iota(shard.train_index.begin(), shard.train_index.end(), 0u);

    out.shards.push_back(std::move(shard));
    if (truth != nullptr) {
      truth->device_models.push_back(std::move(model));
      truth->feature_means.push_back(std::move(mean));
    }
  }

  out.recompute_weights();
  json prov{{"generator", spec.iid ? "synthetic_iid" : "synthetic"},
            {"params", synthetic_spec_to_json(spec)},
            {"num_shards", out.shards.size()},
            {"input_dim", out.input_dim},
            {"num_classes", out.num_classes}};
  out.provenance = prov.dump();
  return out;
}

SyntheticSpec synthetic_spec_from_provenance(const std::string& provenance) {
  json prov;
  try {
    prov = json::parse(provenance);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad provenance JSON: ") + e.what());
  }
  const std::string gen = prov.value("generator", "");
  if (gen != "synthetic" && gen != "synthetic_iid") {
    throw ValidationError("provenance is not from the synthetic generator");
  }
  const json& p = prov.at("params");
  SyntheticSpec spec;
  spec.alpha = p.at("alpha").get<double>();
  spec.beta = p.at("beta").get<double>();
  spec.iid = p.at("iid").get<bool>();
  spec.num_devices = p.at("num_devices").get<std::size_t>();
  spec.input_dim = p.at("input_dim").get<std::size_t>();
  spec.num_classes = p.at("num_classes").get<std::size_t>();
  spec.power_law_exponent = p.at("power_law_exponent").get<double>();
  spec.min_samples = p.at("min_samples").get<std::uint32_t>();
  spec.max_samples = p.at("max_samples").get<std::uint32_t>();
  spec.seed = p.at("seed").get<std::uint64_t>();
  return spec;
}

void MnistPartitionSpec::validate() const {
  if (num_devices < 1) throw ValidationError("num_devices must be >= 1");
  if (classes_per_device < 1) {
    throw ValidationError("classes_per_device must be >= 1");
  }
  if (num_classes < classes_per_device) {
    throw ValidationError("classes_per_device exceeds num_classes");
  }
  if (power_law_exponent <= 0.0) {
    throw ValidationError("power_law_exponent must be > 0");
  }
  if (min_samples < 1 || max_samples < min_samples) {
    throw ValidationError("need 1 <= min_samples <= max_samples");
  }
}

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("IDX file truncated while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

// Enumerates all size-k combinations of `items` in lexicographic order.
std::vector<std::vector<std::uint32_t>> combinations(
    const std::vector<std::uint32_t>& items, std::size_t k) {
  std::vector<std::vector<std::uint32_t>> result;
  std::vector<std::size_t> pick(k);
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    std::vector<std::uint32_t> combo(k);
    for (std::size_t i = 0; i < k; ++i) combo[i] = items[pick[i]];
    result.push_back(std::move(combo));
    std::size_t i = k;
    while (i > 0) {
      --i;
      if (pick[i] != i + items.size() - k) break;
      if (i == 0) return result;
    }
    ++pick[i];
    for (std::size_t j = i + 1; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::uint32_t magic = read_u32_be(in, "magic");
  if (magic != 0x00000803u) {
    throw FormatError("not an IDX image file (bad magic)");
  }
  IdxImages out;
  out.count = read_u32_be(in, "count");
  out.rows = read_u32_be(in, "rows");
  out.cols = read_u32_be(in, "cols");
  out.pixels.resize(out.count * out.rows * out.cols);
  if (!in.read(reinterpret_cast<char*>(out.pixels.data()),
               static_cast<std::streamsize>(out.pixels.size()))) {
    throw FormatError("IDX image file truncated");
  }
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::uint32_t magic = read_u32_be(in, "magic");
  if (magic != 0x00000801u) {
    throw FormatError("not an IDX label file (bad magic)");
  }
  const std::uint32_t count = read_u32_be(in, "count");
  std::vector<std::uint8_t> labels(count);
  if (!in.read(reinterpret_cast<char*>(labels.data()), count)) {
    throw FormatError("IDX label file truncated");
  }
  return labels;
}

FederatedDataset partition_mnist(const IdxImages& images,
                                 const std::vector<std::uint8_t>& labels,
                                 const MnistPartitionSpec& spec) {
  spec.validate();
  if (images.count != labels.size()) {
    throw ValidationError("image/label counts differ");
  }
  if (images.count == 0) throw ValidationError("empty input");

  const std::size_t dim = images.rows * images.cols;

  // Inventory per class; only classes actually present get assigned.
  std::vector<std::vector<std::uint32_t>> by_class(spec.num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= spec.num_classes) {
      throw ValidationError("label out of range in input");
    }
    by_class[labels[i]].push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<std::uint32_t> present;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    if (!by_class[c].empty()) present.push_back(c);
  }
  if (present.size() < spec.classes_per_device) {
    throw ValidationError("fewer classes present than classes_per_device");
  }

  // Class combinations round-robin, order shuffled by seed.
  auto combos = combinations(present, spec.classes_per_device);
  RngStream assign_rng(spec.seed, StreamPurpose::dataset_model);
  assign_rng.shuffle(combos);
  std::vector<const std::vector<std::uint32_t>*> device_classes(
      spec.num_devices);
  std::vector<std::size_t> assigned_per_class(spec.num_classes, 0);
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    device_classes[k] = &combos[k % combos.size()];
    for (auto c : *device_classes[k]) ++assigned_per_class[c];
  }

  // One sample per (device, class) slot must exist up front.
  std::string shortfall;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    if (assigned_per_class[c] > by_class[c].size()) {
      shortfall += " class " + std::to_string(c) + ": need " +
                   std::to_string(assigned_per_class[c]) + ", have " +
                   std::to_string(by_class[c].size()) + ";";
    }
  }
  if (!shortfall.empty()) {
    throw ValidationError("class inventory exhausted:" + shortfall);
  }

  RngStream counts(spec.seed, StreamPurpose::dataset_counts);
  std::vector<std::uint32_t> requested(spec.num_devices);
  for (auto& n : requested) {
    n = power_law_count(counts, spec.power_law_exponent, spec.min_samples,
                        spec.max_samples);
  }

  // Per-(device, class) extra demand beyond the reserved sample, split as
  // evenly as possible across the device's classes.
  std::vector<std::vector<std::uint64_t>> extra(spec.num_devices);
  std::vector<std::uint64_t> demand(spec.num_classes, 0);
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    const auto& classes = *device_classes[k];
    const std::uint64_t total_extra =
        requested[k] > classes.size() ? requested[k] - classes.size() : 0;
    extra[k].resize(classes.size());
    for (std::size_t j = 0; j < classes.size(); ++j) {
      extra[k][j] = total_extra / classes.size() +
                    (j < total_extra % classes.size() ? 1 : 0);
      demand[classes[j]] += extra[k][j];
    }
  }

  // Every class's full inventory is handed out: one reserved sample per
  // assigned slot, the rest split proportionally to the power-law draws
  // (largest remainder), so per-device counts keep the drawn shape while the
  // partition drains the input completely.
  std::vector<std::vector<std::uint64_t>> granted(spec.num_devices);
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    granted[k].assign(device_classes[k]->size(), 0);
  }
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    // Classes no device holds keep their samples unassigned.
    if (assigned_per_class[c] == 0) continue;
    const std::uint64_t available =
        by_class[c].size() - assigned_per_class[c];
    if (available == 0) continue;
    struct Slot {
      std::size_t device;
      std::size_t pos;
      double remainder;
    };
    std::vector<Slot> slots;
    std::uint64_t given = 0;
    for (std::size_t k = 0; k < spec.num_devices; ++k) {
      const auto& classes = *device_classes[k];
      for (std::size_t j = 0; j < classes.size(); ++j) {
        if (classes[j] != c) continue;
        double exact;
        if (demand[c] > 0) {
          exact = static_cast<double>(extra[k][j]) *
                  static_cast<double>(available) /
                  static_cast<double>(demand[c]);
        } else {
          exact = static_cast<double>(available) /
                  static_cast<double>(assigned_per_class[c]);
        }
        const auto base = static_cast<std::uint64_t>(exact);
        granted[k][j] = base;
        given += base;
        slots.push_back({k, j, exact - static_cast<double>(base)});
      }
    }
    std::stable_sort(slots.begin(), slots.end(),
                     [](const Slot& a, const Slot& b) {
                       return a.remainder > b.remainder;
                     });
    for (std::size_t i = 0; given < available; i = (i + 1) % slots.size()) {
      ++granted[slots[i].device][slots[i].pos];
      ++given;
    }
  }

  // Hand out concrete sample indices: a seeded shuffle per class, consumed
  // sequentially (reserved sample first, then the granted extras).
  std::vector<std::vector<std::uint32_t>> pool = by_class;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    RngStream order_rng(spec.seed, StreamPurpose::dataset_features, 0, c);
    order_rng.shuffle(pool[c]);
  }
  std::vector<std::size_t> cursor(spec.num_classes, 0);
  std::vector<std::vector<std::uint32_t>> device_samples(spec.num_devices);
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    const auto& classes = *device_classes[k];
    for (std::size_t j = 0; j < classes.size(); ++j) {
      const std::uint32_t c = classes[j];
      const std::uint64_t take = 1 + granted[k][j];
      for (std::uint64_t i = 0; i < take; ++i) {
        device_samples[k].push_back(pool[c][cursor[c]++]);
      }
    }
  }

  FederatedDataset out;
  out.input_dim = dim;
  out.num_classes = spec.num_classes;
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    DeviceShard shard;
    shard.device_id = static_cast<std::uint32_t>(k);
    shard.rows = device_samples[k].size();
    shard.cols = dim;
    shard.features.resize(shard.rows * dim);
    shard.labels.resize(shard.rows);
    for (std::size_t i = 0; i < shard.rows; ++i) {
      const std::uint32_t src = device_samples[k][i];
      const std::uint8_t* px = images.pixels.data() +
                               static_cast<std::size_t>(src) * dim;
      double* row = shard.features.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) {
        row[j] = static_cast<double>(px[j]) / 255.0;
      }
      shard.labels[i] = labels[src];
    }
    shard.train_index.resize(shard.rows);
    std::iota(shard.train_index.begin(), shard.train_index.end(), 0u);
    out.shards.push_back(std::move(shard));
  }
  out.recompute_weights();

  json prov{{"generator", "mnist"},
            {"params",
             json{{"num_devices", spec.num_devices},
                  {"classes_per_device", spec.classes_per_device},
                  {"num_classes", spec.num_classes},
                  {"power_law_exponent", spec.power_law_exponent},
                  {"min_samples", spec.min_samples},
                  {"max_samples", spec.max_samples},
                  {"seed", spec.seed}}},
            {"num_shards", out.shards.size()},
            {"input_dim", out.input_dim},
            {"num_classes", out.num_classes}};
  out.provenance = prov.dump();
  return out;
}

FederatedDataset split_train_test(const FederatedDataset& dataset,
                                  double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split fraction must be in (0, 1)");
  }
  FederatedDataset out = dataset;
  std::vector<std::uint32_t> degenerate;
  for (auto& shard : out.shards) {
    if (shard.rows < 2) {
      shard.train_index.resize(shard.rows);
      std::iota(shard.train_index.begin(), shard.train_index.end(), 0u);
      shard.test_index.clear();
      degenerate.push_back(shard.device_id);
      FEDSIM_LOG_WARN("shard ", shard.device_id,
                      " has < 2 samples; assigned entirely to train");
      continue;
    }
    std::vector<std::uint32_t> order(shard.rows);
    std::iota(order.begin(), order.end(), 0u);
    RngStream rng(seed, StreamPurpose::train_test_split, 0, shard.device_id);
    rng.shuffle(order);
    auto train_n = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(shard.rows)));
    train_n = std::clamp<std::size_t>(train_n, 1, shard.rows);
    if (train_n == shard.rows) {
      FEDSIM_LOG_WARN("shard ", shard.device_id,
                      " test split is empty at fraction ", fraction);
    }
    shard.train_index.assign(order.begin(), order.begin() + train_n);
    shard.test_index.assign(order.begin() + train_n, order.end());
    std::sort(shard.train_index.begin(), shard.train_index.end());
    std::sort(shard.test_index.begin(), shard.test_index.end());
  }
  out.recompute_weights();

  json prov = json::parse(out.provenance.empty() ? "{}" : out.provenance);
  prov["split"] = json{{"fraction", fraction},
                       {"seed", seed},
                       {"degenerate_shards", degenerate}};
  out.provenance = prov.dump();
  return out;
}

namespace {

void write_u16_le(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64_le(out, bits);
}

std::uint16_t read_u16_le(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) {
    throw FormatError("dataset file truncated");
  }
  return static_cast<std::uint16_t>(b[0] | (std::uint16_t(b[1]) << 8));
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("dataset file truncated");
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw FormatError("dataset file truncated");
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64_le(std::istream& in) {
  std::uint64_t bits = read_u64_le(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr char kMagic[4] = {'F', 'S', 'I', 'M'};
constexpr std::uint16_t kVersion = 1;

}  // namespace

void save_dataset(const FederatedDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u16_le(out, kVersion);
  write_u32_le(out, static_cast<std::uint32_t>(dataset.provenance.size()));
  out.write(dataset.provenance.data(),
            static_cast<std::streamsize>(dataset.provenance.size()));
  for (const auto& shard : dataset.shards) {
    write_u32_le(out, shard.device_id);
    write_u32_le(out, static_cast<std::uint32_t>(shard.rows));
    write_u32_le(out, static_cast<std::uint32_t>(shard.cols));
    for (double v : shard.features) write_f64_le(out, v);
    for (std::uint32_t y : shard.labels) write_u32_le(out, y);
    write_u32_le(out, static_cast<std::uint32_t>(shard.train_index.size()));
    for (std::uint32_t idx : shard.train_index) write_u32_le(out, idx);
  }
  if (!out) throw IoError("write failed for " + path);
}

FederatedDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a dataset file (bad magic)");
  }
  const std::uint16_t version = read_u16_le(in);
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " +
                      std::to_string(version));
  }
  const std::uint32_t prov_len = read_u32_le(in);
  std::string provenance(prov_len, '\0');
  if (!in.read(provenance.data(), prov_len)) {
    throw FormatError("dataset file truncated in provenance");
  }
  json prov;
  try {
    prov = json::parse(provenance);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad provenance JSON: ") + e.what());
  }

  FederatedDataset out;
  out.provenance = provenance;
  std::size_t num_shards;
  try {
    num_shards = prov.at("num_shards").get<std::size_t>();
    out.input_dim = prov.at("input_dim").get<std::size_t>();
    out.num_classes = prov.at("num_classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("provenance missing dataset shape: ") +
                      e.what());
  }

  for (std::size_t k = 0; k < num_shards; ++k) {
    DeviceShard shard;
    shard.device_id = read_u32_le(in);
    shard.rows = read_u32_le(in);
    shard.cols = read_u32_le(in);
    if (shard.rows == 0 || shard.cols == 0 ||
        shard.rows > (1u << 30) || shard.cols > (1u << 20)) {
      throw FormatError("corrupt shard dimensions");
    }
    shard.features.resize(shard.rows * shard.cols);
    for (double& v : shard.features) v = read_f64_le(in);
    shard.labels.resize(shard.rows);
    for (std::uint32_t& y : shard.labels) {
      y = read_u32_le(in);
      if (y >= out.num_classes) throw FormatError("label out of range");
    }
    const std::uint32_t train_count = read_u32_le(in);
    if (train_count > shard.rows) {
      throw FormatError("corrupt train index length");
    }
    shard.train_index.resize(train_count);
    for (std::uint32_t& idx : shard.train_index) idx = read_u32_le(in);
    // Test index is the sorted complement.
    std::vector<bool> in_train(shard.rows, false);
    for (std::uint32_t idx : shard.train_index) {
      if (idx >= shard.rows) throw FormatError("corrupt train index");
      in_train[idx] = true;
    }
    for (std::uint32_t i = 0; i < shard.rows; ++i) {
      if (!in_train[i]) shard.test_index.push_back(i);
    }
    out.shards.push_back(std::move(shard));
  }
  out.recompute_weights();
  return out;
}

void save_params(const ParamVector& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_u64_le(out, w.size());
  for (std::size_t i = 0; i < w.size(); ++i) write_f64_le(out, w[i]);
  if (!out) throw IoError("write failed for " + path);
}

ParamVector load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::uint64_t count = read_u64_le(in);
  if (count > (1ull << 32)) throw FormatError("corrupt checkpoint length");
  ParamVector w(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < count; ++i) w[i] = read_f64_le(in);
  return w;
}

}  // namespace fedsim
