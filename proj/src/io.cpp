#include "dmdno/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmdno/config.hpp"
#include "dmdno/error.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace dmdno::io {

namespace {

constexpr std::uint8_t kFloat64 = 0;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

/// Bounded reader over an in-memory copy of the stream; every read names the
/// field it is decoding so truncation errors point at it.
class Cursor {
 public:
  explicit Cursor(std::istream& is) {
    std::ostringstream ss;
    ss << is.rdbuf();
    buf_ = std::move(ss).str();
  }

  template <typename T>
  T get(const std::string& field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }

  std::string bytes(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(double* out, std::size_t n, const std::string& field) {
    if (n > remaining() / sizeof(double)) throw FormatError("truncated payload in " + field);
    std::memcpy(out, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n, const std::string& field) const {
    if (n > remaining()) throw FormatError("truncated file while reading " + field);
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

void check_magic(Cursor& c, const char (&magic)[8], const char* kind) {
  const std::string m = c.bytes(8, "magic");
  if (std::memcmp(m.data(), magic, 8) != 0) {
    throw FormatError(std::string("bad magic: not a ") + kind + " file");
  }
}

void check_version(Cursor& c, std::uint32_t expected) {
  const auto v = c.get<std::uint32_t>("format version");
  if (v != expected) {
    throw FormatError("format version mismatch: file has " + std::to_string(v) + ", expected " +
                      std::to_string(expected));
  }
}

config::Json read_json_record(Cursor& c, const std::string& field) {
  const auto len = c.get<std::uint32_t>(field + " length");
  const std::string text = c.bytes(len, field);
  try {
    return config::Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError(field + " is not valid JSON");
  }
}

void write_json_record(std::ostream& os, const config::Json& j) {
  const std::string text = j.dump();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  put_bytes(os, text);
}

struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

void write_array(std::ostream& os, const std::string& name, const Array& a) {
  put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  put_bytes(os, name);
  put<std::uint8_t>(os, kFloat64);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(a.dims.size()));
  for (std::uint64_t d : a.dims) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
}

Array read_array(Cursor& c, std::string& name, std::size_t index) {
  const std::string slot = "array " + std::to_string(index);
  const auto name_len = c.get<std::uint16_t>(slot + " name length");
  name = c.bytes(name_len, slot + " name");
  const std::string label = "array '" + name + "'";
  const auto dtype = c.get<std::uint8_t>(label + " dtype");
  if (dtype != kFloat64) throw FormatError(label + " has unsupported dtype " + std::to_string(dtype));
  const auto ndim = c.get<std::uint8_t>(label + " ndim");
  Array a;
  std::uint64_t count = 1;
  for (std::uint8_t k = 0; k < ndim; ++k) {
    const auto d = c.get<std::uint64_t>(label + " dims");
    a.dims.push_back(d);
    if (d != 0 && count > (c.remaining() / sizeof(double)) / d + 1) {
      throw FormatError(label + " dims exceed the file size");
    }
    count *= d;
  }
  if (count > c.remaining() / sizeof(double)) throw FormatError("truncated payload in " + label);
  a.data.resize(count);
  c.doubles(a.data.data(), count, label);
  return a;
}

// Complex matrices are split into real and imaginary parts; n x r per sample.
template <typename Get>
Array stack_samples(const pde::Dataset& d, std::vector<std::uint64_t> inner, Get get) {
  Array a;
  a.dims.push_back(d.samples.size());
  a.dims.insert(a.dims.end(), inner.begin(), inner.end());
  for (const pde::Sample& s : d.samples) get(s, a.data);
  return a;
}

void push_row_major(const Matrix& m, std::vector<double>& out) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
}

const Array& require(const std::map<std::string, Array>& arrays, const std::string& name,
                     std::vector<std::uint64_t> dims) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("missing array '" + name + "'");
  if (it->second.dims != dims) throw FormatError("array '" + name + "' has unexpected dims");
  return it->second;
}

}  // namespace

void write_dataset(std::ostream& os, const pde::Dataset& d) {
  const std::size_t n = d.samples.size();
  if (n == 0) throw InvalidInput("cannot save an empty dataset");
  const auto state = static_cast<std::uint64_t>(d.state_size());
  const auto cond = static_cast<std::uint64_t>(d.condition_size());
  const auto cols = static_cast<std::uint64_t>(d.samples.front().trajectory.cols());
  const auto rank = static_cast<std::uint64_t>(d.samples.front().dmd.rank);
  const auto nsig = static_cast<std::uint64_t>(d.samples.front().dmd.sigmas.size());
  for (const pde::Sample& s : d.samples) {
    if (s.condition.size() != cond || static_cast<std::uint64_t>(s.trajectory.rows()) != state ||
        static_cast<std::uint64_t>(s.trajectory.cols()) != cols || static_cast<std::uint64_t>(s.dmd.rank) != rank ||
        static_cast<std::uint64_t>(s.dmd.sigmas.size()) != nsig) {
      throw InvalidInput("samples differ in shape; the dataset cannot be stored as arrays");
    }
  }

  os.write(kDatasetMagic, 8);
  put<std::uint32_t>(os, kDatasetVersion);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(d.equation()));
  write_json_record(os, config::to_json(d.params));

  std::vector<std::pair<std::string, Array>> arrays;
  arrays.emplace_back("conditions", stack_samples(d, {cond}, [](const pde::Sample& s, std::vector<double>& o) {
                        o.insert(o.end(), s.condition.begin(), s.condition.end());
                      }));
  arrays.emplace_back("trajectories", stack_samples(d, {state, cols}, [](const pde::Sample& s, std::vector<double>& o) {
                        push_row_major(s.trajectory, o);
                      }));
  arrays.emplace_back("targets", stack_samples(d, {state}, [](const pde::Sample& s, std::vector<double>& o) {
                        o.insert(o.end(), s.target.data(), s.target.data() + s.target.size());
                      }));
  arrays.emplace_back("dmd_modes_re", stack_samples(d, {state, rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        push_row_major(s.dmd.modes.real(), o);
                      }));
  arrays.emplace_back("dmd_modes_im", stack_samples(d, {state, rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        push_row_major(s.dmd.modes.imag(), o);
                      }));
  arrays.emplace_back("dmd_eigs_re", stack_samples(d, {rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        for (const Complex& z : s.dmd.eigenvalues) o.push_back(z.real());
                      }));
  arrays.emplace_back("dmd_eigs_im", stack_samples(d, {rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        for (const Complex& z : s.dmd.eigenvalues) o.push_back(z.imag());
                      }));
  arrays.emplace_back("dmd_amps_re", stack_samples(d, {rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        for (const Complex& z : s.dmd.amplitudes) o.push_back(z.real());
                      }));
  arrays.emplace_back("dmd_amps_im", stack_samples(d, {rank}, [](const pde::Sample& s, std::vector<double>& o) {
                        for (const Complex& z : s.dmd.amplitudes) o.push_back(z.imag());
                      }));
  arrays.emplace_back("dmd_sigmas", stack_samples(d, {nsig}, [](const pde::Sample& s, std::vector<double>& o) {
                        o.insert(o.end(), s.dmd.sigmas.data(), s.dmd.sigmas.data() + s.dmd.sigmas.size());
                      }));

  put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, a] : arrays) write_array(os, name, a);
  if (!os) throw IoError("write failed while storing the dataset");
}

pde::Dataset read_dataset(std::istream& is) {
  Cursor c(is);
  check_magic(c, kDatasetMagic, "DMDNODS1 dataset");
  check_version(c, kDatasetVersion);
  const auto tag = c.get<std::uint8_t>("equation tag");
  if (tag > static_cast<std::uint8_t>(pde::Equation::kBurgers)) {
    throw FormatError("equation tag " + std::to_string(tag) + " is not a known equation");
  }
  pde::Dataset d;
  const config::Json params = read_json_record(c, "params record");
  try {
    config::from_json(params, d.params);
    pde::validate(d.params);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("params record: ") + e.what());
  }
  if (static_cast<std::uint8_t>(d.params.equation) != tag) {
    throw FormatError("equation tag disagrees with the params record");
  }

  const auto count = c.get<std::uint32_t>("array count");
  std::map<std::string, Array> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name;
    Array a = read_array(c, name, k);
    if (!arrays.emplace(name, std::move(a)).second) throw FormatError("duplicate array '" + name + "'");
  }
  if (c.remaining() != 0) throw FormatError("trailing bytes after the last array");

  const std::uint64_t n = d.params.n_samples;
  const auto state = static_cast<std::uint64_t>(d.state_size());
  const auto cond = static_cast<std::uint64_t>(d.condition_size());
  const auto cols = static_cast<std::uint64_t>(d.params.steps) + 1;
  const Array& conditions = require(arrays, "conditions", {n, cond});
  const Array& traj = require(arrays, "trajectories", {n, state, cols});
  const Array& targets = require(arrays, "targets", {n, state});
  auto rank_it = arrays.find("dmd_eigs_re");
  if (rank_it == arrays.end()) throw FormatError("missing array 'dmd_eigs_re'");
  if (rank_it->second.dims.size() != 2) throw FormatError("array 'dmd_eigs_re' has unexpected dims");
  const std::uint64_t rank = rank_it->second.dims[1];
  const Array& modes_re = require(arrays, "dmd_modes_re", {n, state, rank});
  const Array& modes_im = require(arrays, "dmd_modes_im", {n, state, rank});
  const Array& eigs_re = require(arrays, "dmd_eigs_re", {n, rank});
  const Array& eigs_im = require(arrays, "dmd_eigs_im", {n, rank});
  const Array& amps_re = require(arrays, "dmd_amps_re", {n, rank});
  const Array& amps_im = require(arrays, "dmd_amps_im", {n, rank});
  auto sig_it = arrays.find("dmd_sigmas");
  if (sig_it == arrays.end()) throw FormatError("missing array 'dmd_sigmas'");
  if (sig_it->second.dims.size() != 2 || sig_it->second.dims[0] != n) {
    throw FormatError("array 'dmd_sigmas' has unexpected dims");
  }
  const std::uint64_t nsig = sig_it->second.dims[1];
  if (arrays.size() != 10) throw FormatError("unexpected extra arrays in dataset");

  const auto S = static_cast<Eigen::Index>(state);
  const auto C = static_cast<Eigen::Index>(cols);
  const auto R = static_cast<Eigen::Index>(rank);
  d.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    pde::Sample& s = d.samples[i];
    s.condition.assign(conditions.data.begin() + static_cast<std::ptrdiff_t>(i * cond),
                       conditions.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cond));
    s.trajectory = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        traj.data.data() + i * state * cols, S, C);
    s.target = Eigen::Map<const Vector>(targets.data.data() + i * state, S);
    using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    const RowMajorMap re(modes_re.data.data() + i * state * rank, S, R);
    const RowMajorMap im(modes_im.data.data() + i * state * rank, S, R);
    s.dmd.modes.resize(S, R);
    s.dmd.modes.real() = re;
    s.dmd.modes.imag() = im;
    s.dmd.eigenvalues.resize(R);
    s.dmd.amplitudes.resize(R);
    for (Eigen::Index k = 0; k < R; ++k) {
      s.dmd.eigenvalues[k] = {eigs_re.data[i * rank + k], eigs_im.data[i * rank + k]};
      s.dmd.amplitudes[k] = {amps_re.data[i * rank + k], amps_im.data[i * rank + k]};
    }
    s.dmd.sigmas = Eigen::Map<const Vector>(sig_it->second.data.data() + i * nsig, static_cast<Eigen::Index>(nsig));
    s.dmd.rank = static_cast<int>(rank);
  }
  return d;
}

void save_dataset(const pde::Dataset& d, const std::filesystem::path& path) {
  std::ostringstream os;
  write_dataset(os, d);
  write_file_atomic(path, std::move(os).str());
}

pde::Dataset load_dataset(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  return read_dataset(is);
}

void write_checkpoint(std::ostream& os, const model::OperatorSpec& spec, const model::ModelParams& params) {
  if (params.theta.size() != model::make_layout(spec).size) {
    throw InvalidInput("parameter vector does not match the operator layout");
  }
  os.write(kCheckpointMagic, 8);
  put<std::uint32_t>(os, kCheckpointVersion);
  write_json_record(os, config::to_json(spec));
  put<std::uint64_t>(os, params.theta.size());
  os.write(reinterpret_cast<const char*>(params.theta.data()),
           static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  if (!os) throw IoError("write failed while storing the checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  Cursor c(is);
  check_magic(c, kCheckpointMagic, "DMDNOMP1 checkpoint");
  check_version(c, kCheckpointVersion);
  Checkpoint cp;
  const config::Json spec = read_json_record(c, "operator spec");
  try {
    config::from_json(spec, cp.spec);
    cp.params.layout = model::make_layout(cp.spec);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("operator spec: ") + e.what());
  }
  const auto n = c.get<std::uint64_t>("theta length");
  if (n != cp.params.layout.size) {
    throw FormatError("theta length " + std::to_string(n) + " does not match the operator layout (" +
                      std::to_string(cp.params.layout.size) + ")");
  }
  cp.params.theta.resize(n);
  c.doubles(cp.params.theta.data(), n, "theta payload");
  if (c.remaining() != 0) throw FormatError("trailing bytes after the theta payload");
  return cp;
}

void save_checkpoint(const model::OperatorSpec& spec, const model::ModelParams& params,
                     const std::filesystem::path& path) {
  std::ostringstream os;
  write_checkpoint(os, spec, params);
  write_file_atomic(path, std::move(os).str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  return read_checkpoint(is);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("read failed for " + path.string());
  return std::move(ss).str();
}

}  // namespace dmdno::io
