#include "csdp/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

double parse_double(const std::string& tok, const std::string& where) {
  std::string t = trim(tok);
  require(!t.empty(), where, ": empty value");
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  require(end == t.c_str() + t.size(), where, ": bad number '", t, "'");
  return v;
}

long parse_long(const std::string& tok, const std::string& where) {
  std::string t = trim(tok);
  require(!t.empty(), where, ": empty integer");
  char* end = nullptr;
  long v = std::strtol(t.c_str(), &end, 10);
  require(end == t.c_str() + t.size(), where, ": bad integer '", t, "'");
  return v;
}

std::string loc(const std::filesystem::path& p, long line) {
  std::ostringstream os;
  os << p.string() << ":" << line;
  return os.str();
}

}  // namespace

std::vector<Index> Dataset::train_indices() const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i)
    if (split[static_cast<size_t>(i)] == Split::train) out.push_back(i);
  return out;
}

std::vector<Index> Dataset::test_indices() const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i)
    if (split[static_cast<size_t>(i)] == Split::test) out.push_back(i);
  return out;
}

void validate(const Dataset& d) {
  size_t n = d.series.size();
  require(n >= 2, "dataset needs at least 2 series, got ", n);
  require(d.labels.size() == n && d.split.size() == n && d.label_mask.size() == n,
          "dataset per-series arrays out of sync");
  require(d.classes >= 2, "dataset needs >= 2 classes, got ", d.classes);
  Index c = d.series[0].channels();
  for (size_t i = 0; i < n; ++i) {
    const TimeSeries& s = d.series[i];
    require(s.channels() == c, "series ", i, " has ", s.channels(),
            " channels, expected ", c);
    require(s.channels() >= 1 && s.length() >= 1, "series ", i, " is empty");
    require(s.values.allFinite(), "series ", i, " contains non-finite values");
    require(d.labels[i] >= -1 && d.labels[i] < d.classes, "series ", i, " label ",
            d.labels[i], " outside [0,", d.classes, ")");
  }
}

// ---------------------------------------------------------------------------
// .ts format
// ---------------------------------------------------------------------------

Dataset parse_ts(const std::filesystem::path& path, Split tag) {
  std::ifstream in(path);
  require(in.good(), "cannot open ", path.string());

  Dataset d;
  std::vector<std::string> vocab;
  long dims = -1;
  bool has_class_label = false;
  bool in_data = false;
  std::string line;
  long lineno = 0;
  int next_id = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty()) continue;

    if (!in_data) {
      if (t[0] == '#') continue;
      require(t[0] == '@', loc(path, lineno),
              ": expected a directive before @data, got '", t, "'");
      size_t sp = t.find_first_of(" \t");
      std::string name = lower(sp == std::string::npos ? t.substr(1) : t.substr(1, sp - 1));
      std::string rest = sp == std::string::npos ? "" : trim(t.substr(sp + 1));
      if (name == "problemname" || name == "serieslength") {
        // recorded nowhere: lengths are taken from the data itself
      } else if (name == "dimensions") {
        dims = parse_long(rest, loc(path, lineno));
        require(dims >= 1, loc(path, lineno), ": @dimensions must be >= 1");
      } else if (name == "classlabel") {
        std::istringstream is(rest);
        std::string flag;
        is >> flag;
        require(lower(flag) == "true", loc(path, lineno),
                ": only labeled data is supported (@classLabel true ...)");
        std::string lab;
        while (is >> lab) vocab.push_back(lab);
        require(vocab.size() >= 2, loc(path, lineno),
                ": @classLabel must list at least 2 labels");
        has_class_label = true;
      } else if (name == "data") {
        require(dims >= 1, loc(path, lineno), ": @data before @dimensions");
        require(has_class_label, loc(path, lineno), ": @data before @classLabel");
        in_data = true;
      } else {
        std::cerr << "warning: " << loc(path, lineno) << ": ignoring directive @"
                  << name << "\n";
      }
      continue;
    }

    std::vector<std::string> fields = split_on(t, ':');
    require(static_cast<long>(fields.size()) == dims + 1, loc(path, lineno), ": got ",
            fields.size() - 1, " channels + label, expected ", dims);
    std::string label = trim(fields.back());
    auto it = std::find(vocab.begin(), vocab.end(), label);
    require(it != vocab.end(), loc(path, lineno), ": unknown class label '", label, "'");

    std::vector<std::vector<double>> chans(static_cast<size_t>(dims));
    for (long c = 0; c < dims; ++c) {
      for (const std::string& tok : split_on(fields[static_cast<size_t>(c)], ','))
        chans[static_cast<size_t>(c)].push_back(parse_double(tok, loc(path, lineno)));
      require(chans[static_cast<size_t>(c)].size() == chans[0].size(), loc(path, lineno),
              ": channel ", c, " has ", chans[static_cast<size_t>(c)].size(),
              " values, channel 0 has ", chans[0].size());
    }
    TimeSeries s;
    s.series_id = next_id++;
    s.values.resize(dims, static_cast<Index>(chans[0].size()));
    for (long c = 0; c < dims; ++c)
      for (size_t ti = 0; ti < chans[0].size(); ++ti)
        s.values(c, static_cast<Index>(ti)) = chans[static_cast<size_t>(c)][ti];
    require(s.values.allFinite(), loc(path, lineno), ": non-finite value in series");
    d.series.push_back(std::move(s));
    d.labels.push_back(static_cast<int>(it - vocab.begin()));
    d.split.push_back(tag);
    d.label_mask.push_back(1);
  }
  require(in_data, path.string(), ": missing @data section");
  d.classes = static_cast<int>(vocab.size());
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// long CSV
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCsvHeader = "series_id,channel,time_index,value,label,split";

struct SeriesAccum {
  std::map<std::pair<long, long>, double> cells;
  int label = -2;  // -2 = not yet seen
  Split split = Split::train;
  long max_chan = -1;
  long max_time = -1;
};

}  // namespace

Dataset parse_long_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open ", path.string());
  std::string line;
  long lineno = 0;
  require(static_cast<bool>(std::getline(in, line)), path.string(), ": empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(trim(line) == kCsvHeader, loc(path, lineno), ": header must be '", kCsvHeader,
          "'");

  std::map<long, SeriesAccum> acc;
  std::vector<long> order;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split_on(line, ',');
    require(f.size() == 6, loc(path, lineno), ": expected 6 columns, got ", f.size());
    long sid = parse_long(f[0], loc(path, lineno));
    long ch = parse_long(f[1], loc(path, lineno));
    long tix = parse_long(f[2], loc(path, lineno));
    double v = parse_double(f[3], loc(path, lineno));
    require(ch >= 0 && tix >= 0, loc(path, lineno), ": negative channel/time index");
    std::string labtok = trim(f[4]);
    int label = labtok.empty() ? -1 : static_cast<int>(parse_long(labtok, loc(path, lineno)));
    std::string sptok = trim(f[5]);
    require(sptok == "train" || sptok == "test", loc(path, lineno),
            ": split must be train|test, got '", sptok, "'");
    Split sp = sptok == "train" ? Split::train : Split::test;

    auto [it, fresh] = acc.try_emplace(sid);
    if (fresh) order.push_back(sid);
    SeriesAccum& sa = it->second;
    bool inserted = sa.cells.emplace(std::make_pair(ch, tix), v).second;
    require(inserted, loc(path, lineno), ": duplicate cell (series_id=", sid,
            ", channel=", ch, ", time_index=", tix, ")");
    if (sa.label == -2) {
      sa.label = label;
      sa.split = sp;
    } else {
      require(sa.label == label, loc(path, lineno), ": series ", sid,
              " has conflicting labels");
      require(sa.split == sp, loc(path, lineno), ": series ", sid,
              " has conflicting splits");
    }
    sa.max_chan = std::max(sa.max_chan, ch);
    sa.max_time = std::max(sa.max_time, tix);
  }

  Dataset d;
  int max_label = -1;
  for (long sid : order) {
    SeriesAccum& sa = acc.at(sid);
    long c = sa.max_chan + 1, t = sa.max_time + 1;
    TimeSeries s;
    s.series_id = static_cast<int>(sid);
    s.values.resize(c, t);
    for (long ci = 0; ci < c; ++ci)
      for (long ti = 0; ti < t; ++ti) {
        auto it = sa.cells.find({ci, ti});
        require(it != sa.cells.end(), path.string(), ": missing cell (series_id=", sid,
                ", channel=", ci, ", time_index=", ti, ")");
        s.values(ci, ti) = it->second;
      }
    d.series.push_back(std::move(s));
    d.labels.push_back(sa.label);
    d.split.push_back(sa.split);
    d.label_mask.push_back(sa.label >= 0 ? 1 : 0);
    max_label = std::max(max_label, sa.label);
  }
  d.classes = std::max(2, max_label + 1);
  validate(d);
  return d;
}

void serialize_long_csv(const Dataset& d, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot write ", path.string());
  out << kCsvHeader << "\n";
  char buf[64];
  for (size_t i = 0; i < d.series.size(); ++i) {
    const TimeSeries& s = d.series[i];
    for (Index c = 0; c < s.channels(); ++c)
      for (Index t = 0; t < s.length(); ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", s.values(c, t));
        out << s.series_id << ',' << c << ',' << t << ',' << buf << ',';
        if (d.labels[i] >= 0) out << d.labels[i];
        out << ',' << (d.split[i] == Split::train ? "train" : "test") << "\n";
      }
  }
  out.flush();
  require(out.good(), "short write on ", path.string());
}

// ---------------------------------------------------------------------------
// normalization and splitting
// ---------------------------------------------------------------------------

Dataset zscore_normalize(const Dataset& d) {
  Dataset out = d;
  for (TimeSeries& s : out.series) {
    for (Index c = 0; c < s.channels(); ++c) {
      auto row = s.values.row(c);
      double mean = row.mean();
      double var = (row.array() - mean).square().mean();
      double sd = std::sqrt(var);
      if (sd < 1e-8)
        row.setZero();
      else
        row = (row.array() - mean) / sd;
    }
  }
  return out;
}

SemiSplit split_semisupervised(Dataset& d, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "label fraction must be in (0,1], got ",
          fraction);
  std::vector<std::vector<Index>> pools(static_cast<size_t>(d.classes));
  std::vector<Index> train = d.train_indices();
  for (Index i : train) {
    int lab = d.labels[static_cast<size_t>(i)];
    if (lab >= 0) pools[static_cast<size_t>(lab)].push_back(i);
  }
  for (int k = 0; k < d.classes; ++k)
    require(!pools[static_cast<size_t>(k)].empty(), "class ", k,
            " is absent from the train split");

  SemiSplit out;
  out.fraction = fraction;
  for (int k = 0; k < d.classes; ++k) {
    auto& pool = pools[static_cast<size_t>(k)];
    auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    deterministic_shuffle(pool, rng);
    size_t take = static_cast<size_t>(
        std::max<long long>(1, std::llround(fraction * static_cast<double>(pool.size()))));
    take = std::min(take, pool.size());
    out.labeled_indices.insert(out.labeled_indices.end(), pool.begin(),
                               pool.begin() + static_cast<long>(take));
  }
  std::sort(out.labeled_indices.begin(), out.labeled_indices.end());
  for (Index i : train)
    if (!std::binary_search(out.labeled_indices.begin(), out.labeled_indices.end(), i))
      out.unlabeled_indices.push_back(i);

  std::fill(d.label_mask.begin(), d.label_mask.end(), 0);
  for (Index i : out.labeled_indices) d.label_mask[static_cast<size_t>(i)] = 1;
  return out;
}

}  // namespace csdp
