#include "jmx/terms.hpp"

#include <algorithm>
#include <cctype>

#include "jmx/basis.hpp"
#include "jmx/error.hpp"
#include "jmx/table.hpp"

namespace jmx {

namespace {

std::string trim(std::string s) {
  auto sp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && sp(s.back())) s.pop_back();
  std::size_t k = 0;
  while (k < s.size() && sp(s[k])) ++k;
  return s.substr(k);
}

std::vector<std::string> split_top(const std::string& s, char sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char c : s)
    if (!(std::isalnum(c) || c == '_' || c == '.')) return false;
  return !std::isdigit(static_cast<unsigned char>(s.front()));
}

Term parse_factor(const std::string& text, const std::string& time_var) {
  const std::string s = trim(text);
  const auto open = s.find('(');
  if (open != std::string::npos) {
    if (s.back() != ')') throw Error(ErrorCode::InvalidSpec, "malformed term '" + s + "'");
    const std::string fn = trim(s.substr(0, open));
    const auto args = split_top(s.substr(open + 1, s.size() - open - 2), ',');
    Term t;
    if (fn == "ns") t.kind = Term::Kind::Ns;
    else if (fn == "dns") t.kind = Term::Kind::Dns;
    else if (fn == "ins") t.kind = Term::Kind::Ins;
    else throw Error(ErrorCode::InvalidSpec, "unknown term function '" + fn + "'");
    if (args.size() != 2) throw Error(ErrorCode::InvalidSpec, fn + "() takes (time, df)");
    if (args[0] != time_var)
      throw Error(ErrorCode::InvalidSpec,
                  fn + "() must be applied to the time variable '" + time_var + "'");
    double df = 0;
    if (!parse_number(args[1], df) || df < 1 || df != static_cast<int>(df))
      throw Error(ErrorCode::InvalidSpec, fn + "(): df must be a positive integer");
    t.name = args[0];
    t.df = static_cast<int>(df);
    return t;
  }
  if (!valid_name(s)) throw Error(ErrorCode::InvalidSpec, "invalid term '" + s + "'");
  Term t;
  t.kind = s == time_var ? Term::Kind::Time : Term::Kind::Covariate;
  t.name = s;
  return t;
}

Term make_interaction(std::vector<Term> parts) {
  if (parts.size() == 1) return parts.front();
  Term t;
  t.kind = Term::Kind::Interaction;
  t.parts = std::move(parts);
  return t;
}

}  // namespace

std::string Term::label() const {
  switch (kind) {
    case Kind::Covariate:
    case Kind::Time: return name;
    case Kind::Ns: return "ns(" + name + ", " + std::to_string(df) + ")";
    case Kind::Dns: return "dns(" + name + ", " + std::to_string(df) + ")";
    case Kind::Ins: return "ins(" + name + ", " + std::to_string(df) + ")";
    case Kind::Interaction: {
      std::string s;
      for (std::size_t k = 0; k < parts.size(); ++k) s += (k ? ":" : "") + parts[k].label();
      return s;
    }
  }
  return name;
}

TermList TermList::parse(const std::string& expr, const std::string& time_var,
                         bool default_intercept) {
  TermList out;
  out.intercept = default_intercept;
  std::string body = trim(expr);
  if (!body.empty() && body.front() == '~') body = trim(body.substr(1));
  if (body.empty()) {
    out.intercept = false;
    return out;
  }
  std::vector<Term> collected;
  auto add = [&](Term t) {
    for (const auto& c : collected)
      if (c == t) return;
    collected.push_back(std::move(t));
  };
  for (const auto& piece : split_top(body, '+')) {
    if (piece.empty()) throw Error(ErrorCode::InvalidSpec, "empty term in '" + expr + "'");
    if (piece == "0" || piece == "-1") {
      out.intercept = false;
      continue;
    }
    if (piece == "1") {
      out.intercept = true;
      continue;
    }
    const auto star = split_top(piece, '*');
    if (star.size() > 1) {
      std::vector<Term> factors;
      for (const auto& f : star) factors.push_back(parse_factor(f, time_var));
      const std::size_t k = factors.size();
      // all nonempty subsets, lower order first
      for (std::size_t size = 1; size <= k; ++size)
        for (unsigned mask = 1; mask < (1u << k); ++mask) {
          if (static_cast<std::size_t>(__builtin_popcount(mask)) != size) continue;
          std::vector<Term> parts;
          for (std::size_t j = 0; j < k; ++j)
            if (mask & (1u << j)) parts.push_back(factors[j]);
          add(make_interaction(std::move(parts)));
        }
      continue;
    }
    const auto colon = split_top(piece, ':');
    std::vector<Term> parts;
    for (const auto& f : colon) parts.push_back(parse_factor(f, time_var));
    add(make_interaction(std::move(parts)));
  }
  std::stable_sort(collected.begin(), collected.end(),
                   [](const Term& a, const Term& b) { return a.order() < b.order(); });
  out.terms = std::move(collected);
  return out;
}

std::string TermList::str() const {
  std::string s = intercept ? "1" : "0";
  for (const auto& t : terms) s += " + " + t.label();
  return s;
}

std::set<std::string> TermList::covariates() const {
  std::set<std::string> out;
  auto visit = [&](const Term& t, auto&& self) -> void {
    if (t.kind == Term::Kind::Covariate) out.insert(t.name);
    for (const auto& p : t.parts) self(p, self);
  };
  for (const auto& t : terms) visit(t, visit);
  return out;
}

std::set<int> TermList::spline_dfs() const {
  std::set<int> out;
  auto visit = [&](const Term& t, auto&& self) -> void {
    if (t.kind == Term::Kind::Ns || t.kind == Term::Kind::Dns || t.kind == Term::Kind::Ins)
      out.insert(t.df);
    for (const auto& p : t.parts) self(p, self);
  };
  for (const auto& t : terms) visit(t, visit);
  return out;
}

DesignContext make_design_context(
    const std::string& time_var, const std::vector<const TermList*>& lists,
    const std::vector<double>& times,
    const std::map<std::string, std::vector<std::string>>& observed,
    const std::map<std::string, std::vector<std::string>>& level_overrides) {
  DesignContext ctx;
  ctx.time_var = time_var;
  std::set<int> dfs;
  std::set<std::string> covs;
  for (const auto* l : lists) {
    for (int d : l->spline_dfs()) dfs.insert(d);
    for (const auto& c : l->covariates()) covs.insert(c);
  }
  if (!dfs.empty()) {
    if (times.empty()) throw Error(ErrorCode::EmptyTable, "no time values for spline knots");
    const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
    for (int df : dfs) {
      SplineKnots k;
      k.low = *lo;
      k.high = *hi;
      for (int j = 1; j < df; ++j) k.interior.push_back(quantile(times, double(j) / df));
      for (std::size_t j = 0; j < k.interior.size(); ++j)
        if (!(k.interior[j] > k.low && k.interior[j] < k.high) ||
            (j > 0 && !(k.interior[j] > k.interior[j - 1])))
          throw Error(ErrorCode::DuplicateKnots,
                      "ns(" + time_var + ", " + std::to_string(df) +
                          "): time quantiles do not give distinct knots");
      ctx.splines[df] = std::move(k);
    }
  }
  for (const auto& c : covs) {
    if (auto it = level_overrides.find(c); it != level_overrides.end()) {
      ctx.factors[c] = it->second;
    } else if (auto ob = observed.find(c); ob != observed.end()) {
      ctx.factors[c] = ob->second;
    }
  }
  return ctx;
}

namespace {

struct Block {
  std::vector<std::string> names;
  Eigen::VectorXd values;
};

const SplineKnots& knots_for(const DesignContext& ctx, int df) {
  auto it = ctx.splines.find(df);
  if (it == ctx.splines.end())
    throw Error(ErrorCode::InvalidSpec, "no knots prepared for spline df " + std::to_string(df));
  return it->second;
}

const std::string& lookup(const Covariates& cov, const std::string& name) {
  auto it = cov.find(name);
  if (it == cov.end()) throw Error(ErrorCode::MissingColumn, "covariate '" + name + "' missing");
  return it->second;
}

Block evaluate(const Term& term, const DesignContext& ctx, double t, const Covariates* cov,
               bool want_values) {
  Block b;
  const std::string label = term.label();
  switch (term.kind) {
    case Term::Kind::Time:
      b.names = {label};
      if (want_values) b.values = Eigen::VectorXd::Constant(1, t);
      break;
    case Term::Kind::Covariate: {
      if (ctx.is_factor(term.name)) {
        const auto& lv = ctx.factors.at(term.name);
        for (std::size_t k = 1; k < lv.size(); ++k) b.names.push_back(term.name + lv[k]);
        if (want_values) {
          b.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lv.size()) - 1);
          const std::string& v = lookup(*cov, term.name);
          auto pos = std::find(lv.begin(), lv.end(), v);
          if (pos == lv.end())
            throw Error(ErrorCode::BadValue, "unknown level '" + v + "' of '" + term.name + "'");
          const auto idx = pos - lv.begin();
          if (idx > 0) b.values(idx - 1) = 1.0;
        }
      } else {
        b.names = {term.name};
        if (want_values) {
          double v = 0;
          const std::string& s = lookup(*cov, term.name);
          if (!parse_number(s, v))
            throw Error(ErrorCode::BadValue,
                        "non-numeric value '" + s + "' for covariate '" + term.name + "'");
          b.values = Eigen::VectorXd::Constant(1, v);
        }
      }
      break;
    }
    case Term::Kind::Ns:
    case Term::Kind::Dns:
    case Term::Kind::Ins: {
      const auto& k = knots_for(ctx, term.df);
      for (int j = 1; j <= term.df; ++j) b.names.push_back(label + std::to_string(j));
      if (want_values) {
        const std::pair<double, double> bd{k.low, k.high};
        if (term.kind == Term::Kind::Ns)
          b.values = natural_cubic_basis<double>(t, term.df, bd, k.interior);
        else if (term.kind == Term::Kind::Dns)
          b.values = natural_cubic_deriv<double>(t, term.df, bd, k.interior);
        else
          b.values = natural_cubic_integral<double>(std::max(t, 0.0), term.df, bd, k.interior);
      }
      break;
    }
    case Term::Kind::Interaction: {
      // first component varies fastest
      Block acc = evaluate(term.parts.front(), ctx, t, cov, want_values);
      for (std::size_t p = 1; p < term.parts.size(); ++p) {
        Block next = evaluate(term.parts[p], ctx, t, cov, want_values);
        Block out;
        for (std::size_t j = 0; j < next.names.size(); ++j)
          for (std::size_t i = 0; i < acc.names.size(); ++i)
            out.names.push_back(acc.names[i] + ":" + next.names[j]);
        if (want_values) {
          out.values.resize(static_cast<Eigen::Index>(out.names.size()));
          Eigen::Index c = 0;
          for (Eigen::Index j = 0; j < next.values.size(); ++j)
            for (Eigen::Index i = 0; i < acc.values.size(); ++i)
              out.values(c++) = acc.values(i) * next.values(j);
        }
        acc = std::move(out);
      }
      b = std::move(acc);
      break;
    }
  }
  return b;
}

}  // namespace

std::vector<std::string> column_names(const TermList& terms, const DesignContext& ctx) {
  std::vector<std::string> out;
  if (terms.intercept) out.push_back("(Intercept)");
  for (const auto& t : terms.terms) {
    auto b = evaluate(t, ctx, 0.0, nullptr, false);
    out.insert(out.end(), b.names.begin(), b.names.end());
  }
  return out;
}

Eigen::Index design_width(const TermList& terms, const DesignContext& ctx) {
  return static_cast<Eigen::Index>(column_names(terms, ctx).size());
}

Eigen::RowVectorXd design_row(const TermList& terms, const DesignContext& ctx, double t,
                              const Covariates& cov) {
  std::vector<double> vals;
  if (terms.intercept) vals.push_back(1.0);
  for (const auto& term : terms.terms) {
    auto b = evaluate(term, ctx, t, &cov, true);
    vals.insert(vals.end(), b.values.data(), b.values.data() + b.values.size());
  }
  return Eigen::Map<Eigen::RowVectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Eigen::MatrixXd build_design(const TermList& terms, const DesignContext& ctx,
                             const std::vector<double>& times,
                             const std::vector<Covariates>& cov) {
  if (times.size() != cov.size())
    throw Error(ErrorCode::BadValue, "build_design: times and covariates differ in length");
  const Eigen::Index w = design_width(terms, ctx);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(times.size()), w);
  for (std::size_t r = 0; r < times.size(); ++r)
    X.row(static_cast<Eigen::Index>(r)) = design_row(terms, ctx, times[r], cov[r]);
  return X;
}

}  // namespace jmx
