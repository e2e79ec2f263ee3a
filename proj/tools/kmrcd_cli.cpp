// Command-line front end for the kmrcd library: fit reports, outlier
// detection, Gram export, and simulation runs. All numeric output uses 17
// significant digits so files round-trip exactly; identical configuration
// and seed give byte-identical files (simulate's runtime column excepted).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kmrcd/kmrcd.hpp"

namespace {

using kmrcd::io::format_value;

struct CommonOpts {
  std::string input;
  std::string kernel = "linear";
  double sigma = 0.0;
  int h = 0;
  double h_fraction = 0.0;
  std::uint64_t seed = kmrcd::config::kDefaultSeed;
  std::string output_dir = ".";
  std::string format = "json";
  bool no_standardize = false;
  int contour_grid = 0;
};

struct SimOpts {
  std::string generator = "alyz";
  std::string contamination = "shift";
  int n = 200;
  int p = 2;
  double eps = 0.0;
  std::string kernel = "linear";
  double sigma = 0.0;
  int h = 0;
  double h_fraction = 0.0;
  std::uint64_t seed = kmrcd::config::kDefaultSeed;
  int reps = 1;
  std::string output_dir = ".";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool gram_input_allowed) {
  // --h would collide with the default -h help shortcut
  cmd->set_help_flag("--help", "Print this help message and exit");
  cmd->add_option("--input", o.input, "Input CSV (coordinates, or a Gram matrix for --kernel precomputed)")
      ->required();
  std::vector<std::string> kernels = {"linear", "rbf", "poly2"};
  if (gram_input_allowed) kernels.emplace_back("precomputed");
  cmd->add_option("--kernel", o.kernel, "Kernel")
      ->check(CLI::IsMember(kernels))
      ->capture_default_str();
  cmd->add_option("--sigma", o.sigma, "RBF bandwidth (0 = median heuristic)")
      ->capture_default_str();
  cmd->add_option("--h", o.h, "Subset size (0 = use --h-fraction or the default)");
  cmd->add_option("--h-fraction", o.h_fraction, "Subset size as a fraction of n, in [0.5, 1)");
  cmd->add_option("--seed", o.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--output-dir", o.output_dir, "Directory for output files")
      ->capture_default_str();
  cmd->add_flag("--no-standardize", o.no_standardize,
                "Use the coordinates as given instead of robustly standardizing");
}

[[nodiscard]] kmrcd::KernelSpec parse_kernel(const std::string& name, double sigma) {
  if (sigma != 0.0 && name != "rbf") {
    throw std::invalid_argument("--sigma applies only to the rbf kernel");
  }
  if (name == "linear") return kmrcd::KernelSpec::linear();
  if (name == "rbf") return kmrcd::KernelSpec::rbf(sigma);
  if (name == "poly2") return kmrcd::KernelSpec::polynomial(2, 1.0);
  if (name == "precomputed") return kmrcd::KernelSpec::precomputed();
  throw std::invalid_argument("unknown kernel '" + name + "'");
}

[[nodiscard]] std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", static_cast<unsigned>(c));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

[[nodiscard]] std::string kernel_json(const kmrcd::KernelSpec& spec) {
  std::ostringstream os;
  os << "{\"type\": \"" << spec.name() << "\"";
  if (spec.type == kmrcd::KernelType::rbf) {
    os << ", \"sigma\": " << format_value(spec.sigma);
  } else if (spec.type == kmrcd::KernelType::polynomial) {
    os << ", \"degree\": " << spec.degree << ", \"offset\": " << format_value(spec.offset);
  }
  os << "}";
  return os.str();
}

template <typename T, typename Fmt>
[[nodiscard]] std::string join(const std::vector<T>& values, const char* sep, Fmt&& fmt) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << sep;
    os << fmt(values[i]);
  }
  return os.str();
}

// The report schema is fixed, so a small writer keeps every float at 17
// significant digits; a JSON library would impose its own float format.
void write_report_json(const std::string& path, const std::string& command,
                       const std::string& input, const kmrcd::KmrcdFit& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "{\n";
  out << "  \"command\": \"" << json_escape(command) << "\",\n";
  out << "  \"input\": \"" << json_escape(input) << "\",\n";
  out << "  \"kernel\": " << kernel_json(fit.kernel) << ",\n";
  out << "  \"n\": " << fit.n << ",\n";
  out << "  \"h\": " << fit.h << ",\n";
  out << "  \"seed\": " << fit.seed << ",\n";
  out << "  \"rho\": " << format_value(fit.rho) << ",\n";
  out << "  \"start_rhos\": [";
  for (std::size_t i = 0; i < fit.start_rhos.size(); ++i) {
    if (i) out << ", ";
    out << format_value(fit.start_rhos[i]);
  }
  out << "],\n";
  out << "  \"objective\": " << format_value(fit.objective) << ",\n";
  out << "  \"winning_start\": \"" << kmrcd::start_origin_name(fit.winning_start) << "\",\n";
  out << "  \"subset_indices\": [" << join(fit.subset.indices, ", ", [](int i) {
    return std::to_string(i);
  }) << "],\n";
  out << "  \"cutoff\": " << format_value(fit.cutoff) << ",\n";
  int n_flagged = 0;
  for (int f : fit.flags) n_flagged += f;
  out << "  \"n_flagged\": " << n_flagged << ",\n";
  out << "  \"flags\": [" << join(fit.flags, ", ", [](int f) { return std::to_string(f); })
      << "],\n";
  out << "  \"standardization\": [";
  for (std::size_t j = 0; j < fit.standardization.size(); ++j) {
    if (j) out << ", ";
    out << "{\"location\": " << format_value(fit.standardization[j].location)
        << ", \"scale\": " << format_value(fit.standardization[j].scale) << "}";
  }
  out << "],\n";
  out << "  \"starts\": [";
  for (std::size_t s = 0; s < fit.starts.size(); ++s) {
    const auto& st = fit.starts[s];
    if (s) out << ", ";
    out << "{\"origin\": \"" << kmrcd::start_origin_name(st.origin) << "\", \"rho\": "
        << format_value(st.rho) << ", \"objective\": " << format_value(st.objective)
        << ", \"c_steps\": " << st.c_steps << "}";
  }
  out << "]\n";
  out << "}\n";
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

void write_report_csv(const std::string& path, const std::string& command,
                      const std::string& input, const kmrcd::KmrcdFit& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "key,value\n";
  out << "command," << command << "\n";
  out << "input," << input << "\n";
  out << "kernel," << fit.kernel.name() << "\n";
  if (fit.kernel.type == kmrcd::KernelType::rbf) {
    out << "sigma," << format_value(fit.kernel.sigma) << "\n";
  } else if (fit.kernel.type == kmrcd::KernelType::polynomial) {
    out << "degree," << fit.kernel.degree << "\n";
    out << "offset," << format_value(fit.kernel.offset) << "\n";
  }
  out << "n," << fit.n << "\n";
  out << "h," << fit.h << "\n";
  out << "seed," << fit.seed << "\n";
  out << "rho," << format_value(fit.rho) << "\n";
  out << "start_rhos,";
  for (std::size_t i = 0; i < fit.start_rhos.size(); ++i) {
    if (i) out << ';';
    out << format_value(fit.start_rhos[i]);
  }
  out << "\n";
  out << "objective," << format_value(fit.objective) << "\n";
  out << "winning_start," << kmrcd::start_origin_name(fit.winning_start) << "\n";
  out << "subset_indices," << join(fit.subset.indices, ";", [](int i) {
    return std::to_string(i);
  }) << "\n";
  out << "cutoff," << format_value(fit.cutoff) << "\n";
  int n_flagged = 0;
  for (int f : fit.flags) n_flagged += f;
  out << "n_flagged," << n_flagged << "\n";
  out << "flags," << join(fit.flags, ";", [](int f) { return std::to_string(f); }) << "\n";
  out << "standardization_location," << join(fit.standardization, ";", [](const auto& ls) {
    return format_value(ls.location);
  }) << "\n";
  out << "standardization_scale," << join(fit.standardization, ";", [](const auto& ls) {
    return format_value(ls.scale);
  }) << "\n";
  for (const auto& st : fit.starts) {
    const std::string origin = kmrcd::start_origin_name(st.origin);
    out << "start_" << origin << "_rho," << format_value(st.rho) << "\n";
    out << "start_" << origin << "_objective," << format_value(st.objective) << "\n";
    out << "start_" << origin << "_c_steps," << st.c_steps << "\n";
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

void write_distances_csv(const std::string& path, const kmrcd::KmrcdFit& fit) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "index,distance,flag\n";
  for (int i = 0; i < fit.n; ++i) {
    out << i << ',' << format_value(fit.distances(i)) << ','
        << fit.flags[static_cast<std::size_t>(i)] << "\n";
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

void write_contour_csv(const std::string& path, const kmrcd::Matrix& raw,
                       const kmrcd::KmrcdFit& fit, int grid) {
  const kmrcd::Matrix z = kmrcd::apply_standardization(raw, fit.standardization);
  kmrcd::Matrix x_subset(fit.h, z.cols());
  for (int t = 0; t < fit.h; ++t) x_subset.row(t) = z.row(fit.subset.indices[static_cast<std::size_t>(t)]);
  const kmrcd::PointScorer scorer(std::move(x_subset), fit.kernel, fit.rho);

  std::array<double, 2> lo{};
  std::array<double, 2> hi{};
  for (int j = 0; j < 2; ++j) {
    lo[static_cast<std::size_t>(j)] = raw.col(j).minCoeff();
    hi[static_cast<std::size_t>(j)] = raw.col(j).maxCoeff();
    const double range = hi[static_cast<std::size_t>(j)] - lo[static_cast<std::size_t>(j)];
    const double pad = 0.05 * (range > 0.0 ? range : 1.0);
    lo[static_cast<std::size_t>(j)] -= pad;
    hi[static_cast<std::size_t>(j)] += pad;
  }

  kmrcd::Matrix points(static_cast<Eigen::Index>(grid) * grid, 2);
  Eigen::Index r = 0;
  for (int gy = 0; gy < grid; ++gy) {
    const double y = lo[1] + (hi[1] - lo[1]) * gy / (grid - 1);
    for (int gx = 0; gx < grid; ++gx) {
      points(r, 0) = lo[0] + (hi[0] - lo[0]) * gx / (grid - 1);
      points(r, 1) = y;
      ++r;
    }
  }
  const kmrcd::Vector d = scorer.distances(kmrcd::apply_standardization(points, fit.standardization));

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "x,y,distance\n";
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out << format_value(points(i, 0)) << ',' << format_value(points(i, 1)) << ','
        << format_value(d(i)) << "\n";
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

[[nodiscard]] std::string out_path(const CommonOpts& o, const std::string& name) {
  std::filesystem::create_directories(o.output_dir);
  return (std::filesystem::path(o.output_dir) / name).string();
}

int run_fit_like(const CommonOpts& o, bool detect) {
  const kmrcd::KernelSpec spec = parse_kernel(o.kernel, o.sigma);
  kmrcd::FitOptions opts;
  opts.h = o.h;
  opts.h_fraction = o.h_fraction;
  opts.seed = o.seed;

  kmrcd::KmrcdFit fit;
  kmrcd::Matrix raw;
  if (spec.type == kmrcd::KernelType::precomputed) {
    const kmrcd::GramMatrix gram = kmrcd::io::load_gram_csv(o.input);
    if (detect && gram.n() < 4) {
      throw std::runtime_error("detect needs at least 4 observations");
    }
    fit = kmrcd::fit(gram, opts);
  } else {
    const kmrcd::io::CsvTable table = kmrcd::io::read_csv(o.input);
    raw = table.values;
    if (detect && raw.rows() < 4) {
      throw std::runtime_error("detect needs at least 4 observations");
    }
    const kmrcd::DataMatrix data{raw, o.no_standardize};
    fit = kmrcd::fit(data, spec, opts);
  }

  if (fit.kernel.type == kmrcd::KernelType::rbf) {
    std::cout << "rbf sigma: " << format_value(fit.kernel.sigma) << "\n";
  }

  const std::string command = detect ? "detect" : "fit";
  if (o.format == "json") {
    write_report_json(out_path(o, "report.json"), command, o.input, fit);
  } else {
    write_report_csv(out_path(o, "report.csv"), command, o.input, fit);
  }

  if (detect) {
    write_distances_csv(out_path(o, "distances.csv"), fit);
    if (fit.linear) {
      kmrcd::io::write_csv(out_path(o, "center.csv"),
                           kmrcd::Matrix(fit.linear->center.transpose()));
      kmrcd::io::write_csv(out_path(o, "covariance.csv"), fit.linear->covariance);
    }
    if (o.contour_grid > 0) {
      if (spec.type == kmrcd::KernelType::precomputed) {
        throw std::runtime_error("--contour-grid needs coordinate input");
      }
      if (raw.cols() != 2) throw std::runtime_error("--contour-grid needs bivariate data");
      if (o.contour_grid < 2) throw std::runtime_error("--contour-grid must be at least 2");
      write_contour_csv(out_path(o, "contour.csv"), raw, fit, o.contour_grid);
    }
  }
  return 0;
}

int run_gram(const CommonOpts& o) {
  const kmrcd::KernelSpec spec = parse_kernel(o.kernel, o.sigma);
  if (spec.type == kmrcd::KernelType::precomputed) {
    throw std::runtime_error("gram needs a coordinate kernel, not precomputed");
  }
  const kmrcd::io::CsvTable table = kmrcd::io::read_csv(o.input);
  const kmrcd::DataMatrix data{table.values, o.no_standardize};
  data.validate();

  kmrcd::DataMatrix working = data;
  if (!data.standardized) {
    working = kmrcd::robust_standardize(data).data;
  }
  kmrcd::KernelSpec resolved = spec;
  if (resolved.type == kmrcd::KernelType::rbf && resolved.sigma == 0.0) {
    resolved.sigma = kmrcd::median_heuristic_bandwidth(working);
  }
  if (resolved.type == kmrcd::KernelType::rbf) {
    std::cout << "rbf sigma: " << format_value(resolved.sigma) << "\n";
  }
  const kmrcd::GramMatrix gram = kmrcd::gram_matrix(resolved, working);
  kmrcd::io::write_csv(out_path(o, "gram.csv"), gram.k);
  return 0;
}

int run_simulate(const SimOpts& o) {
  kmrcd::sim::SimScenario sc;
  if (o.generator == "alyz") sc.generator = kmrcd::sim::Generator::alyz;
  else if (o.generator == "tcopula") sc.generator = kmrcd::sim::Generator::t_copula;
  else if (o.generator == "clayton") sc.generator = kmrcd::sim::Generator::clayton;
  else if (o.generator == "circle") sc.generator = kmrcd::sim::Generator::circle;
  else throw std::invalid_argument("unknown generator '" + o.generator +
                                   "', valid: alyz tcopula clayton circle");
  if (o.contamination == "none") sc.contamination = kmrcd::sim::Contamination::none;
  else if (o.contamination == "point") sc.contamination = kmrcd::sim::Contamination::point;
  else if (o.contamination == "shift") sc.contamination = kmrcd::sim::Contamination::shift;
  else if (o.contamination == "cluster") sc.contamination = kmrcd::sim::Contamination::cluster;
  else throw std::invalid_argument("unknown contamination '" + o.contamination +
                                   "', valid: none point shift cluster");
  sc.n = o.n;
  sc.p = o.p;
  sc.eps = o.eps;
  sc.kernel = parse_kernel(o.kernel, o.sigma);
  sc.h = o.h;
  sc.h_fraction = o.h_fraction;
  sc.reps = o.reps;
  sc.seed = o.seed;

  const std::vector<kmrcd::sim::SimRow> rows = kmrcd::sim::run_scenario(sc);

  std::filesystem::create_directories(o.output_dir);
  const std::string path = (std::filesystem::path(o.output_dir) / "simulation.csv").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "rep,generator,contamination,kernel,n,p,eps,h,rho,kl,mse,"
         "outliers_in_subset,outliers_in_top,runtime_s\n";
  const std::string scenario_cols = std::string(kmrcd::sim::generator_name(sc.generator)) + "," +
                                    kmrcd::sim::contamination_name(sc.contamination) + "," +
                                    sc.kernel.name() + "," + std::to_string(sc.n) + "," +
                                    std::to_string(sc.p) + "," + format_value(sc.eps);
  double sum_h = 0.0, sum_rho = 0.0, sum_kl = 0.0, sum_mse = 0.0;
  double sum_in_subset = 0.0, sum_in_top = 0.0, sum_rt = 0.0;
  for (const auto& row : rows) {
    out << row.rep << ',' << scenario_cols << ',' << row.h << ',' << format_value(row.rho) << ','
        << format_value(row.kl) << ',' << format_value(row.mse) << ',' << row.outliers_in_subset
        << ',' << row.outliers_in_top << ',' << format_value(row.runtime_s) << "\n";
    sum_h += row.h;
    sum_rho += row.rho;
    sum_kl += row.kl;
    sum_mse += row.mse;
    sum_in_subset += row.outliers_in_subset;
    sum_in_top += row.outliers_in_top;
    sum_rt += row.runtime_s;
  }
  if (!rows.empty()) {
    const double r = static_cast<double>(rows.size());
    out << "mean," << scenario_cols << ',' << format_value(sum_h / r) << ','
        << format_value(sum_rho / r) << ',' << format_value(sum_kl / r) << ','
        << format_value(sum_mse / r) << ',' << format_value(sum_in_subset / r) << ','
        << format_value(sum_in_top / r) << ',' << format_value(sum_rt / r) << "\n";
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel minimum regularized covariance determinant estimator"};
  app.require_subcommand(1);

  CommonOpts fit_opts;
  CLI::App* cmd_fit = app.add_subcommand("fit", "Fit the estimator and write a report");
  add_common(cmd_fit, fit_opts, true);
  cmd_fit->add_option("--format", fit_opts.format, "Report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  CommonOpts detect_opts;
  CLI::App* cmd_detect =
      app.add_subcommand("detect", "Fit, then write distances and outlier flags");
  add_common(cmd_detect, detect_opts, true);
  cmd_detect->add_option("--format", detect_opts.format, "Report format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  cmd_detect->add_option("--contour-grid", detect_opts.contour_grid,
                         "Write distance values on an N x N grid (bivariate data only)");

  CommonOpts gram_opts;
  CLI::App* cmd_gram = app.add_subcommand("gram", "Write the kernel Gram matrix");
  add_common(cmd_gram, gram_opts, false);

  SimOpts sim_opts;
  CLI::App* cmd_sim = app.add_subcommand("simulate", "Run simulation replications");
  cmd_sim->set_help_flag("--help", "Print this help message and exit");
  cmd_sim->add_option("--generator", sim_opts.generator, "Data generator")
      ->check(CLI::IsMember({"alyz", "tcopula", "clayton", "circle"}))
      ->capture_default_str();
  cmd_sim->add_option("--contamination", sim_opts.contamination, "Contamination type (alyz only)")
      ->check(CLI::IsMember({"none", "point", "shift", "cluster"}))
      ->capture_default_str();
  cmd_sim->add_option("--n", sim_opts.n, "Sample size")->capture_default_str();
  cmd_sim->add_option("--p", sim_opts.p, "Dimension (alyz only; others are bivariate)")
      ->capture_default_str();
  cmd_sim->add_option("--eps", sim_opts.eps, "Contamination fraction in [0, 0.5)")
      ->capture_default_str();
  cmd_sim->add_option("--kernel", sim_opts.kernel, "Kernel")
      ->check(CLI::IsMember({"linear", "rbf", "poly2"}))
      ->capture_default_str();
  cmd_sim->add_option("--sigma", sim_opts.sigma, "RBF bandwidth (0 = median heuristic)");
  cmd_sim->add_option("--h", sim_opts.h, "Subset size");
  cmd_sim->add_option("--h-fraction", sim_opts.h_fraction, "Subset fraction in [0.5, 1)");
  cmd_sim->add_option("--seed", sim_opts.seed, "RNG seed")->capture_default_str();
  cmd_sim->add_option("--reps", sim_opts.reps, "Replications")->capture_default_str();
  cmd_sim->add_option("--output-dir", sim_opts.output_dir, "Directory for output files")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_fit->parsed()) return run_fit_like(fit_opts, false);
    if (cmd_detect->parsed()) return run_fit_like(detect_opts, true);
    if (cmd_gram->parsed()) return run_gram(gram_opts);
    if (cmd_sim->parsed()) return run_simulate(sim_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
